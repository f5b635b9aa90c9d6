"""Desk-scale MaskConver panoptic segmentation."""
