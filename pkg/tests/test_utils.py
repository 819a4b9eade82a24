"""
Unit tests for utility functions.
"""
import numpy as np
import pandas as pd

from src.utils import create_markdown_table, fmt_float, read_json, write_json


def test_fmt_float_round_trips():
    """Test float formatting round trips."""
    for value in (0.1, 1.0 / 3.0, 2.7027027027027026, 1e-300):
        assert float(fmt_float(value)) == value


def test_markdown_table():
    """Test markdown tables."""
    assert create_markdown_table(pd.DataFrame()) == "_no rows_"
    table = create_markdown_table(pd.DataFrame([{'state': 'unsafe', 'v_lo': 0.0}]))
    assert 'state' in table and 'unsafe' in table


def test_json_converts_numpy(tmp_path):
    """Test JSON conversion of numpy values."""
    path = tmp_path / 'out.json'
    write_json(path, {'values': np.array([1.5, 2.0]), 'count': np.int64(3), 1: np.float64(0.25)})
    assert read_json(path) == {'values': [1.5, 2.0], 'count': 3, '1': 0.25}
