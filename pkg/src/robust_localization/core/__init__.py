"""
Cost functions, solvers and experiment orchestration.
"""
