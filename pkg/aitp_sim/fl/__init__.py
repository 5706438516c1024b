"""Federated learning: the shared regressor, differential privacy and secure aggregation."""
