"""Domain services: environments, trees, spine estimators, walks, clusters and experiments."""
