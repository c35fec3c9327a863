import pytest

ACCEPTANCE = []


def record(number, name, ok, detail=""):
    """Remember one acceptance outcome for the terminal summary."""
    ACCEPTANCE.append((number, name, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")


@pytest.fixture
def small_cfg_path(tmp_path):
    """Tiny domain for end-to-end plumbing checks (runs in about a second)."""
    path = tmp_path / "small.yaml"
    path.write_text(
        "domain:\n  outer: [-0.6, 0.6, -0.4, 0.4]\n  inner: [-0.5, 0.5, -0.3, 0.3]\n  h: 0.05\n"
        "time:\n  T: 1.0\n  tau: 0.0025\n"
        "inversion:\n  n_max: 4\n"
        "refine:\n  n_max: 2\n"
        "stability:\n  lipschitz_perturbations: 2\n  lipschitz_h: 0.1\n  lipschitz_tau: 0.02\n"
        "  probe_h: 0.02\n  probe_functions: 2\n")
    return path


@pytest.fixture
def small_cfg(small_cfg_path):
    from wavecip.config import load_config

    return load_config(small_cfg_path)
