"""
rwre package

Random walks in random environment on Galton-Watson trees: the domain models, services and the CLI pipeline.
"""
