import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leakfree_kt.data import Interaction, InteractionLog, KCMapping, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_dataset(rng, num_students=6, num_questions=12, num_kcs=6, max_group=3, max_len=10):
    """Logs with mixed group sizes (1..max_group) drawn from ``rng``."""
    entries = {}
    for q in range(num_questions):
        k = int(rng.integers(1, max_group + 1))
        entries[q] = tuple(sorted(rng.choice(num_kcs, size=k, replace=False).tolist()))
    mapping = KCMapping(entries, frozenset(range(num_kcs)))
    logs = []
    for s in range(num_students):
        n = int(rng.integers(1, max_len + 1))
        qs = rng.integers(0, num_questions, size=n)
        logs.append(InteractionLog(f"s{s}", [
            Interaction(f"s{s}", t, int(q), entries[int(q)], int(rng.integers(0, 2))) for t, q in enumerate(qs)
        ]))
    return logs, mapping


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(30, 20, 6, 2, seed=3, questions_per_student=10)


def finite_difference_check(model, batch, step=1e-4, max_entries=None, rng=None, floor=1e-6):
    """Relative error per parameter tensor between autograd and central differences.

    Returns ``{name: (rel_error, grad_norm)}``. Both sides use ``training_loss``.
    Norms below ``floor`` are compared absolutely, since central differences
    carry O(step**2) truncation error that swamps near-zero gradients.
    """
    import torch

    model.zero_grad()
    model.training_loss(batch).backward()
    out = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
        flat = p.data.view(-1)
        idx = range(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            idx = sorted((rng or np.random.default_rng(0)).choice(flat.numel(), size=max_entries, replace=False))
        idx = list(idx)
        fd = torch.zeros(len(idx), dtype=p.dtype)
        with torch.no_grad():
            for j, i in enumerate(idx):
                old = flat[i].item()
                flat[i] = old + step
                up = model.training_loss(batch).item()
                flat[i] = old - step
                down = model.training_loss(batch).item()
                flat[i] = old
                fd[j] = (up - down) / (2 * step)
        a = analytic[idx]
        scale = max(a.norm().item(), fd.norm().item(), floor)
        out[name] = ((a - fd).norm().item() / scale, a.norm().item())
    return out
