"""
PETC-IMC - Utility Functions

Handles number formatting, tables and result files.
"""
import json
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd


def fmt_float(value: float) -> str:
    """17 significant digits: enough to read back the same double."""
    return f"{float(value):.17g}"


def create_markdown_table(df: pd.DataFrame) -> str:
    """
    Create a markdown table from a pandas DataFrame.
    """
    if df.empty:
        return "_no rows_"
    return df.to_markdown(index=False, floatfmt='.6g')


def _to_python(obj):
    """Convert numpy scalars and arrays to plain Python values."""
    if isinstance(obj, dict):
        return {str(k): _to_python(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_python(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_python(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Union[str, Path], data: Dict):
    """Write a result file; floats are written in shortest round-trip form."""
    Path(path).write_text(json.dumps(_to_python(data), indent=2), encoding='utf-8')


def read_json(path: Union[str, Path]) -> Dict:
    """Read a JSON file."""
    return json.loads(Path(path).read_text(encoding='utf-8'))
