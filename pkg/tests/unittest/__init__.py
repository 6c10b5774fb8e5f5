"""
MATD3 Lab Unit Tests
Networks, particle world, learners, bias probe and experiment harness
"""
