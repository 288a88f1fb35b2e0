"""
Test package for Mimic Explorer
"""
