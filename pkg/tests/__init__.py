"""Unit tests for PETC-IMC."""
