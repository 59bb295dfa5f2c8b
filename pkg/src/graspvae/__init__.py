"""Conditional VAE grasp-space generator for underactuated grippers."""
