import numpy as np
import pytest


def naive_conv3d(x, w, b, stride=(1, 1, 1), padding="valid"):
    """Direct loop cross-correlation, independent of the im2col path."""
    c, l, h, wd = x.shape
    o, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    if padding == "same":
        pads = []
        for n, k, s in zip((l, h, wd), (kt, kh, kw), stride):
            out = -(-n // s)
            total = max((out - 1) * s + k - n, 0)
            pads.append((total // 2, total - total // 2))
        x = np.pad(x, [(0, 0)] + pads)
    _, lp, hp, wp = x.shape
    lo, ho, wo = (lp - kt) // st + 1, (hp - kh) // sh + 1, (wp - kw) // sw + 1
    y = np.zeros((o, lo, ho, wo))
    for oc in range(o):
        for t in range(lo):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for a in range(kt):
                            for bb in range(kh):
                                for cc in range(kw):
                                    acc += x[ci, t * st + a, i * sh + bb, j * sw + cc] * w[oc, ci, a, bb, cc]
                    y[oc, t, i, j] = acc + (b[oc] if b is not None else 0.0)
    return y


def central_difference(f, x, eps=1e-5):
    """Numerical gradient of scalar f at array x (x is perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * eps)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
