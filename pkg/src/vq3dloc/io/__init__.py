"""File formats: sparse-model text export, scans, JSON documents, config."""
