import torch

from wmlm.constraints import ConstraintSpec
from wmlm.model import ModelConfig, TransformerLM

ALL_KINDS = [
    ConstraintSpec.none(),
    ConstraintSpec.fixed_window(3),
    ConstraintSpec.primacy_recency(),
    ConstraintSpec.primacy_only(),
    ConstraintSpec.recency_only(),
    ConstraintSpec.exp_decay(),
    ConstraintSpec.logistic(),
]


def tiny_model(constraint, vocab_size=16, d_model=16, n_heads=2, n_layers=2, max_context=8, seed=0,
               scale=0.3, dtype=torch.float64, tied_head=True):
    """Small model with weights large enough that attention is far from uniform."""
    cfg = ModelConfig(vocab_size=vocab_size, n_layers=n_layers, d_model=d_model, n_heads=n_heads,
                      max_context=max_context, constraint=constraint, tied_head=tied_head)
    model = TransformerLM(cfg, seed=seed).to(dtype)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if not p.requires_grad:
                continue
            if name.endswith(("w_primacy", "w_recency")):
                p.copy_(torch.rand((), generator=gen, dtype=torch.float64) * 2 - 0.5)
            else:
                p.add_(torch.randn(p.shape, generator=gen, dtype=torch.float64).to(p.dtype) * scale)
    return model


# --- acceptance report -----------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}
ACCEPTANCE_DETAIL: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    n, title = marker.args
    if call.when == "setup" and call.excinfo is None:
        return
    status = "PASS" if call.excinfo is None else "FAIL"
    ACCEPTANCE[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title = ACCEPTANCE[n]
        detail = ACCEPTANCE_DETAIL.get(n, "")
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}" + (f" ({detail})" if detail else ""))
