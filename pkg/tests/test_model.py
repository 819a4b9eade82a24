"""
Unit tests for the PETC system model.
"""
import numpy as np
import pytest

from src.errors import AssumptionViolation, ConfigError, StructuralError
from src.geometry import HyperRect, grid_partition
from src.model import InitialDistribution, PETCSystem, RewardSpec, trigger_violated, validate_system


@pytest.fixture
def wiener():
    """Scalar Wiener-driven system."""
    return PETCSystem(A=[[0.0]], B=[[1.0]], K=[[0.0]], B_w=[[1.0]], epsilon=0.1, k_max=3)


@pytest.fixture
def config():
    """2-D test configuration."""
    return {
        'system': {
            'A': [[0.0, 1.0], [-2.0, -3.0]],
            'B': [[1.0, 0.0], [0.0, 1.0]],
            'K': [[-1.0, 0.0], [0.0, -1.0]],
            'B_w': [[0.5, 0.0], [0.0, 0.5]],
            'epsilon': 0.3,
            'k_max': 3,
        },
        'reward': {'kind': 'interevent_time'},
        'solver': {'gamma': 0.9},
    }


def test_validate_scalar_wiener_passes(wiener):
    """Test the scalar Wiener system passes."""
    report = validate_system(wiener)
    assert report.passed
    assert report.kalman_rank == 1


def test_validate_uncontrollable_pair_fails():
    """Test an uncontrollable pair fails."""
    system = PETCSystem(A=np.eye(2), B=np.eye(2), K=-np.eye(2), B_w=[[1.0], [0.0]], epsilon=0.1, k_max=2)
    report = validate_system(system)
    assert not report.passed
    assert report.kalman_rank == 1
    assert [c.name for c in report.failures()] == ['controllability']
    with pytest.raises(AssumptionViolation):
        report.require()


def test_validate_rejects_zero_threshold():
    """Test a zero threshold."""
    system = PETCSystem(A=[[0.0]], B=[[1.0]], K=[[0.0]], B_w=[[1.0]], epsilon=0.0, k_max=3)
    with pytest.raises(AssumptionViolation, match="epsilon"):
        validate_system(system)


def test_validate_rejects_zero_horizon():
    """Test a zero horizon."""
    system = PETCSystem(A=[[0.0]], B=[[1.0]], K=[[0.0]], B_w=[[1.0]], epsilon=0.1, k_max=0)
    with pytest.raises(AssumptionViolation, match="k_max"):
        validate_system(system)


def test_validate_reports_stability(config):
    """Test the stability report."""
    system = PETCSystem.from_config(config)
    report = validate_system(system)
    assert report.passed
    assert sorted(np.real(report.closed_loop_eigenvalues)) == pytest.approx([-3.0, -2.0])
    stability = [c for c in report.checks if c.name == 'closed_loop_stability'][0]
    assert stability.passed and stability.informational
    assert np.isfinite(report.condition_number)


def test_validate_is_deterministic(config):
    """Test validation is deterministic."""
    system = PETCSystem.from_config(config)
    assert validate_system(system).lines() == validate_system(system).lines()


def test_dimension_mismatch_is_structural():
    """Test mismatched shapes."""
    with pytest.raises(StructuralError):
        PETCSystem(A=[[0.0, 1.0], [0.0, 0.0]], B=[[1.0]], K=[[1.0, 0.0]], B_w=[[1.0], [0.0]], epsilon=0.1, k_max=2)
    with pytest.raises(StructuralError):
        PETCSystem(A=[[0.0]], B=[[1.0]], K=[[1.0, 2.0]], B_w=[[1.0]], epsilon=0.1, k_max=2)


def test_system_is_immutable(wiener):
    """Test system matrices are read-only."""
    with pytest.raises(ValueError):
        wiener.A[0, 0] = 1.0


def test_trigger_examples():
    """Test the triggering rule."""
    assert not trigger_violated([0.0, 0.0], [0.0, 0.0], 0.1)
    assert trigger_violated([1.0, 1.0], [1.0, 1.2], 0.1)
    for eps in (0.1, 0.5, 2.0):
        assert not trigger_violated([0.0], [eps], eps)


def test_trigger_translation_invariance():
    """Test the triggering rule is translation invariant."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        x, y = rng.normal(size=2), rng.normal(size=2)
        assert trigger_violated(x, y, 0.7) == trigger_violated(np.zeros(2), y - x, 0.7)


def test_reward_spec_validation():
    """Test reward parameter checks."""
    with pytest.raises(ConfigError):
        RewardSpec(kind='interevent_time', gamma=1.0)
    with pytest.raises(ConfigError):
        RewardSpec(kind='overshoot', gamma=0.5, alpha=1.0, eps_tilde=1.0)
    with pytest.raises(ConfigError):
        RewardSpec(kind='table', gamma=0.5, r_max=1.0, table={(0, 1): (0.8, 0.2)})
    with pytest.raises(ConfigError):
        RewardSpec(kind='table', gamma=0.5, r_max=1.0, table={(0, 1): (0.2, 1.5)})


def test_reward_evaluate_kinds():
    """Test reward evaluation for each kind."""
    x = np.array([[0.0, 0.0], [3.0, 4.0]])
    s = np.array([1, 2])

    interevent = RewardSpec(kind='interevent_time', gamma=0.9)
    assert interevent.evaluate(x, s).tolist() == [1.0, 2.0]
    assert interevent.bound(3) == 3.0

    overshoot = RewardSpec(kind='overshoot', gamma=0.9, alpha=1.0, beta=0.5, eps_tilde=1.0, r_max=1.2)
    assert overshoot.evaluate(x, s) == pytest.approx([1.2, 1.0 / 6.0 + 1.0])


def test_reward_table_evaluate_uses_midpoints():
    """Test table rewards at cell midpoints."""
    partition = grid_partition(HyperRect([0.0], [2.0]), [2])
    table = RewardSpec(kind='table', gamma=0.5, r_max=4.0,
                       table={(0, 1): (1.0, 2.0), (1, 1): (2.0, 4.0)}, unsafe=(0.0, 3.0))
    values = table.evaluate([[0.5], [1.5], [5.0]], [1, 1, 1], partition)
    assert values.tolist() == [1.5, 3.0, 2.0]
    assert table.global_row() == (0.0, 4.0)


def test_reward_from_config(config):
    """Test rewards from a config."""
    reward = RewardSpec.from_config(config)
    assert reward.kind == 'interevent_time'
    assert reward.gamma == 0.9


def test_initial_distribution_checks():
    """Test initial distribution checks."""
    with pytest.raises(ConfigError):
        InitialDistribution(kind='point')
    with pytest.raises(ConfigError):
        InitialDistribution(kind='gaussian', mean=[0.0, 0.0], cov=[[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        InitialDistribution(kind='gaussian', mean=[0.0, 0.0], cov=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConfigError):
        InitialDistribution(kind='cauchy')


def test_initial_distribution_dimension():
    """Vectors of p_0 must match the state dimension and the error names the key."""
    InitialDistribution(kind='uniform').require_dimension(3)
    InitialDistribution(kind='point', point=[0.0, 1.0]).require_dimension(2)
    with pytest.raises(ConfigError, match=r"initial_distribution\.x0"):
        InitialDistribution(kind='point', point=[0.1]).require_dimension(2)
    with pytest.raises(ConfigError, match=r"initial_distribution\.mean"):
        InitialDistribution(kind='gaussian', mean=[0.0], cov=[[1.0]]).require_dimension(2)
    with pytest.raises(ConfigError, match=r"initial_distribution\.lower"):
        InitialDistribution(kind='uniform', lower=[0.0], upper=[1.0]).require_dimension(2)


def test_initial_distribution_sampling():
    """Test initial state sampling."""
    rng = np.random.default_rng(0)
    X = HyperRect([-1.0, 0.0], [1.0, 2.0])
    uniform = InitialDistribution(kind='uniform').sample(rng, 500, X)
    assert uniform.shape == (500, 2)
    assert np.all(X.contains(uniform))
    point = InitialDistribution(kind='point', point=[0.3, 0.4]).sample(rng, 3, X)
    assert point.tolist() == [[0.3, 0.4]] * 3
