"""
End-to-end tests for the command-line entrypoint.
"""
import json
from pathlib import Path

import pytest

from src.imc import IntervalMarkovChain
from src.main import main, sandwich_verdict
from src.sim import MCResult


def wiener_config(epsilon=1.0, k_max=2, gamma=0.5, grid=(4,), lower=-2.0, upper=2.0, x0=None):
    """Scalar Wiener run configuration."""
    config = {
        'system': {'A': [[0.0]], 'B': [[1.0]], 'K': [[0.0]], 'B_w': [[1.0]], 'epsilon': epsilon, 'k_max': k_max},
        'region': {'x_lower': [lower], 'x_upper': [upper], 'grid': list(grid)},
        'reward': {'kind': 'interevent_time'},
        'solver': {'gamma': gamma, 'mc_paths': 2000},
    }
    if x0 is not None:
        config['initial_distribution'] = {'kind': 'point', 'x0': x0}
    return config


def write_config(tmp_path, config, name='run.json'):
    """Write a configuration as JSON."""
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def test_validate_ok(tmp_path, capsys):
    """Test validate on a well-posed system."""
    assert main(['validate', '--config', write_config(tmp_path, wiener_config())]) == 0
    out = capsys.readouterr().out
    assert '[PASS] controllability' in out
    assert 'validation passed' in out


def test_negative_threshold_is_assumption_violation(tmp_path, capsys):
    """Test a negative threshold exits with 2."""
    assert main(['validate', '--config', write_config(tmp_path, wiener_config(epsilon=-1.0))]) == 2
    assert 'epsilon' in capsys.readouterr().err


def test_missing_matrix_is_input_error(tmp_path, capsys):
    """Test a missing matrix exits with 1."""
    config = wiener_config()
    del config['system']['A']
    assert main(['validate', '--config', write_config(tmp_path, config)]) == 1
    assert 'system.A' in capsys.readouterr().err


def test_region_dimension_mismatch(tmp_path):
    """Test a region of the wrong dimension."""
    config = wiener_config()
    config['region'] = {'x_lower': [-1.0, -1.0], 'x_upper': [1.0, 1.0], 'grid': [2, 2]}
    assert main(['validate', '--config', write_config(tmp_path, config)]) == 1


def test_abstract_writes_imc(tmp_path, capsys):
    """Test abstract writes the IMC."""
    out = tmp_path / 'imc.json'
    code = main(['abstract', '--config', write_config(tmp_path, wiener_config()), '--out', str(out)])
    assert code == 0
    assert 'states: 13' in capsys.readouterr().out
    imc = IntervalMarkovChain.load(out)
    assert imc.n_states == 13
    assert imc.meta['int_seed'] == 0


def test_seed_override_is_recorded(tmp_path):
    """Test the seed override."""
    out = tmp_path / 'imc.json'
    code = main(['abstract', '--config', write_config(tmp_path, wiener_config(k_max=1)),
                 '--out', str(out), '--seed', '9'])
    assert code == 0
    assert IntervalMarkovChain.load(out).meta['int_seed'] == 9


def test_evaluate_corrupted_imc(tmp_path, capsys):
    """Test evaluate on a corrupted IMC."""
    bad = tmp_path / 'imc.json'
    bad.write_text('{"states": ["unsafe"]}')
    code = main(['evaluate', '--config', write_config(tmp_path, wiener_config()), '--imc', str(bad)])
    assert code == 1
    assert 'input error' in capsys.readouterr().err


def test_evaluate_without_discount(tmp_path):
    """Test evaluate with zero discount."""
    out = tmp_path / 'bounds.json'
    csv = tmp_path / 'values.csv'
    report = tmp_path / 'report.md'
    code = main(['evaluate', '--config', write_config(tmp_path, wiener_config(gamma=0.0, k_max=1)),
                 '--out', str(out), '--csv', str(csv), '--report', str(report)])
    assert code == 0
    data = json.loads(out.read_text())
    assert data['expectation'] == {'lo': 0.0, 'hi': 0.0}
    assert len(data['per_state']) == 9
    assert csv.read_text().startswith('state,region,s,v_lo,v_hi')
    assert '## Value Bounds' in report.read_text()


def test_simulate_writes_estimate(tmp_path, capsys):
    """Test simulate writes the estimate."""
    out = tmp_path / 'estimate.json'
    code = main(['simulate', '--config', write_config(tmp_path, wiener_config()), '--out', str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert set(data) == {'estimate', 'std_error', 'truncation', 'paths', 'steps'}
    assert data['paths'] == 2000
    assert 'estimate:' in capsys.readouterr().out


def test_check_passes_for_wide_threshold(tmp_path, capsys):
    """Test check on a threshold that never triggers."""
    config = wiener_config(epsilon=100.0, grid=(1,), lower=-50.0, upper=50.0, x0=[0.0])
    out = tmp_path / 'verdict.json'
    assert main(['check', '--config', write_config(tmp_path, config), '--out', str(out)]) == 0
    verdict = json.loads(out.read_text())
    assert verdict['sandwich'] and verdict['non_trivial']
    assert verdict['e_lo'] <= verdict['estimate'] + verdict['margin']
    assert 'check passed' in capsys.readouterr().out


def test_check_reports_sandwich_violation(tmp_path, mocker):
    """Test check exits with 4 on a violated sandwich."""
    config = wiener_config(epsilon=100.0, grid=(1,), lower=-50.0, upper=50.0, x0=[0.0])
    mocker.patch('src.main.mc_expectation', return_value=MCResult(100.0, 0.0, 0.0, 1, 1))
    assert main(['check', '--config', write_config(tmp_path, config)]) == 4


def test_sandwich_verdict():
    """Test the sandwich verdict."""
    mc = MCResult(estimate=1.0, std_error=0.1, truncation=0.01, paths=100, steps=10)
    verdict = sandwich_verdict(1.2, 2.0, mc, r_max=1.0, gamma=0.5)
    assert verdict['margin'] == pytest.approx(0.31)
    assert verdict['sandwich'] and verdict['non_trivial'] and verdict['passed']
    trivial = sandwich_verdict(0.0, 2.0, mc, r_max=1.0, gamma=0.5)
    assert not trivial['non_trivial'] and not trivial['passed']


@pytest.mark.slow
def test_check_two_dimensional_plant(tmp_path):
    """Test check on the two-dimensional plant, serially."""
    config_path = Path(__file__).resolve().parent.parent / 'config.json'
    out = tmp_path / 'verdict.json'
    assert main(['check', '--config', str(config_path), '--out', str(out)]) == 0
    verdict = json.loads(out.read_text())
    assert verdict['passed']
    # interevent-time reward on k_max = 3, gamma = 0.9
    assert verdict['e_hi'] - verdict['e_lo'] < 0.9 * 3.0 / (1.0 - 0.9)


@pytest.mark.parametrize('command', ['abstract', 'simulate'])
def test_initial_point_of_wrong_size(tmp_path, capsys, command):
    """A mis-sized x0 is an input error naming the key."""
    config = wiener_config(x0=[0.1, 0.2])
    assert main([command, '--config', write_config(tmp_path, config), '--out', str(tmp_path / 'out.json')]) == 1
    assert 'initial_distribution.x0' in capsys.readouterr().err
