"""
Test package for force_aggregator
"""
