"""Acceptance criteria, one test per criterion.

Each test records a ``criterion N PASS|FAIL`` line (echoed in the terminal
summary and printed immediately) and then asserts on the same outcome.
Wall-clock budgets are part of each criterion.
"""
import contextlib
import subprocess
import sys
import time

import numpy as np
import torch

from facesketch import arweight, dataio, losses, metrics, trainer
from facesketch.config import TrainConfig
from facesketch.dataio import NUM_CLASSES, labels_to_onehot, make_fixture
from facesketch.discriminator import Discriminator
from facesketch.frozen import stub_extractor, stub_parser
from facesketch.generator import Generator, GeneratorConfig, generate, instance_standardize, si_modulate

import oracles
from conftest import ACCEPTANCE_LINES, block_case, random_case


@contextlib.contextmanager
def criterion(number, title, budget_s):
    detail = {}
    start = time.perf_counter()
    ok, err = False, None
    try:
        yield detail
        ok = True
    except AssertionError as exc:
        err = exc
    elapsed = time.perf_counter() - start
    if elapsed > budget_s:
        ok = False
        detail["over budget"] = f"{elapsed:.1f}s > {budget_s}s"
    info = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = (f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} "
            f"[{elapsed:.1f}s{', ' + info if info else ''}]")
    if err is not None:
        line += f" :: {err}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    if err is not None:
        raise err
    assert ok, line


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def rel_err(got, want):
    """Elementwise relative error; exact zeros in ``want`` must be exact in ``got``."""
    got, want = np.ravel(got), np.ravel(want)
    zero = want == 0
    assert (got[zero] == 0).all(), "non-zero value where the oracle is exactly zero"
    if zero.all():
        return 0.0
    return float((np.abs(got - want)[~zero] / np.abs(want[~zero])).max())


def normwise_rel_err(analytic, numeric):
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    return float(np.abs(analytic - numeric).max() / np.abs(numeric).max())


# --------------------------------------------------------------------------

def test_criterion_1_ar_core_oracle_equivalence():
    with criterion(1, "AR core matches loop oracle on 1000 instances", 30) as d:
        rng = np.random.default_rng(2024)
        worst, with_empty = 0.0, 0
        for _ in range(1000):
            h, w = (int(v) for v in rng.integers(1, 17, size=2))
            empty = int(rng.integers(0, 5))
            y, layout = random_case(rng, h, w, empty=empty)
            f = rng.uniform(-1, 1, size=(h, w))
            with_empty += int((layout.sum(axis=(1, 2)) == 0).any())
            mu, nu, rows = oracles.affinities(f.tolist(), layout.tolist())
            want_loss = oracles.ar_loss(y.tolist(), f.tolist(), layout.tolist())
            stats = arweight.class_stats(t(f), t(layout))
            aff = arweight.affinity_vector(t(f), t(layout))
            assert aff.shape == (2, NUM_CLASSES)
            loss = arweight.ar_loss(t(y), t(f), t(layout)).item()
            worst = max(worst, rel_err(stats.mu.numpy(), mu), rel_err(stats.nu.numpy(), nu),
                        rel_err(aff.numpy(), rows), rel_err([loss], [want_loss]))
        d["max rel err"] = f"{worst:.2e}"
        d["instances with empty classes"] = with_empty
        assert with_empty > 100
        assert worst < 1e-6


def test_criterion_2_gradients():
    with criterion(2, "analytic gradients match central differences", 120) as d:
        step = 1e-4
        rng = np.random.default_rng(77)

        def ar_check(y, layout, f0, h):
            f = t(f0).requires_grad_(True)
            arweight.ar_loss(t(y), f, t(layout)).backward()
            numeric = oracles.central_difference(
                lambda x: oracles.ar_loss(y.tolist(), np.reshape(x, (6, 6)).tolist(), layout.tolist()),
                f0.ravel().tolist(), h)
            return normwise_rel_err(f.grad.numpy(), numeric)

        # region layouts: 2x2 parts on a 3x3 grid, so at least 3 classes are empty
        worst_ar = 0.0
        for _ in range(20):
            f0, layout = block_case(rng, 3, 3, block=2)
            y = rng.uniform(-1, 1, size=(6, 6))
            assert (layout.sum(axis=(1, 2)) == 0).sum() >= 3
            worst_ar = max(worst_ar, ar_check(y, layout, f0, step))
        d["ar"] = f"{worst_ar:.2e}"
        # per-pixel layouts hit the eps-dominated regime of 1-2 pixel classes,
        # whose curvature scale is below 1e-4; resolve them with a finer step
        worst_px = 0.0
        for k in range(20):
            y, layout = random_case(rng, 6, 6, empty=k % 3)
            f0 = rng.uniform(-1, 1, size=(6, 6))
            worst_px = max(worst_px, ar_check(y, layout, f0, 1e-6))
        d["ar per-pixel @1e-6"] = f"{worst_px:.2e}"

        y0 = rng.uniform(-1, 1, size=(6, 6))
        f0 = rng.uniform(-1, 1, size=(6, 6))
        f = t(f0).requires_grad_(True)
        losses.content_loss(t(y0), f).backward()
        numeric = oracles.central_difference(
            lambda x: oracles.mean_abs(y0.tolist(), np.reshape(x, (6, 6)).tolist()), f0.ravel().tolist(), step)
        err_content = normwise_rel_err(f.grad.numpy(), numeric)
        d["content"] = f"{err_content:.2e}"

        # smooth stubs: central differences are invalid across ReLU kinks
        extractor = stub_extractor(activation="softplus").double()
        parser = stub_parser(activation="softplus").double()
        errs = {}
        for name, fn in (("perceptual", lambda a, b: losses.perceptual_loss(a, b, extractor)),
                         ("bce", lambda a, b: losses.bce_parsing_loss(a, b, parser))):
            y = t(rng.uniform(-1, 1, size=(1, 1, 8, 8)))
            x0 = rng.uniform(-1, 1, size=(1, 1, 8, 8))
            x = t(x0).requires_grad_(True)
            fn(y, x).backward()
            with torch.no_grad():
                numeric = oracles.central_difference(
                    lambda v: fn(y, t(np.reshape(v, x0.shape))).item(), x0.ravel().tolist(), step)
            errs[name] = normwise_rel_err(x.grad.numpy(), numeric)
            d[name] = f"{errs[name]:.2e}"
        assert worst_ar < 1e-3
        assert worst_px < 1e-3
        assert err_content < 1e-3
        assert errs["perceptual"] < 1e-3 and errs["bce"] < 1e-3


def test_criterion_3_invariances():
    with criterion(3, "scale, permutation, one-hot and bound invariants", 60) as d:
        rng = np.random.default_rng(5)
        # positive scale: region layouts as produced by a parser
        worst_scale = 0.0
        for _ in range(200):
            f, layout = block_case(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            c0 = arweight.affinity_vector(t(f), t(layout))
            for k in (0.5, 2.0, 10.0):
                worst_scale = max(worst_scale,
                                  (arweight.affinity_vector(t(k * f), t(layout)) - c0).abs().max().item())
        d["scale |delta|"] = f"{worst_scale:.1e}"
        # per-pixel layouts: any deviation is exactly the eps guard's share
        for _ in range(100):
            f, layout = random_case(rng, 8, 8, empty=int(rng.integers(0, 3)))
            maps = arweight.build_ar_maps(arweight.class_stats(t(f), t(layout)), t(layout))
            nb = np.stack([np.linalg.norm(maps.mean_map.numpy(), axis=(1, 2)),
                           np.linalg.norm(maps.var_map.numpy(), axis=(1, 2))])
            c0 = arweight.affinity_vector(t(f), t(layout)).numpy()
            for k in (0.5, 2.0, 10.0):
                ck = arweight.affinity_vector(t(k * f), t(layout)).numpy()
                with np.errstate(divide="ignore", invalid="ignore"):
                    bound = np.abs(c0) * arweight.EPS * np.abs(k ** -np.array([[2.0], [3.0]]) - 1) / (
                        np.linalg.norm(f) * nb)
                assert (np.abs(ck - c0) <= 1.01 * np.where(nb > 0, bound, 0) + 1e-12).all()

        # joint permutation
        worst_perm = 0.0
        for _ in range(50):
            f, layout = random_case(rng, 7, 6, empty=int(rng.integers(0, 3)))
            y = rng.uniform(-1, 1, size=(7, 6))
            p = rng.permutation(42)
            perm = lambda a: a.reshape(*a.shape[:-2], -1)[..., p].reshape(a.shape)  # noqa: E731
            a = arweight.class_stats(t(f), t(layout))
            b = arweight.class_stats(t(perm(f)), t(perm(layout)))
            diffs = [
                (a.mu - b.mu).abs().max().item(), (a.nu - b.nu).abs().max().item(),
                (arweight.affinity_vector(t(f), t(layout))
                 - arweight.affinity_vector(t(perm(f)), t(perm(layout)))).abs().max().item(),
                abs(arweight.ar_loss(t(y), t(f), t(layout)).item()
                    - arweight.ar_loss(t(perm(y)), t(perm(f)), t(perm(layout))).item()),
            ]
            worst_perm = max(worst_perm, *diffs)
        d["perm |delta|"] = f"{worst_perm:.1e}"

        # one-hot through every layout transform
        def onehot(l):
            return l.shape[0] == NUM_CLASSES and set(np.unique(l)) <= {0, 1} and (l.sum(axis=0) == 1).all()

        transforms = 0
        for parser in dataio.SOURCE_LABEL_TABLES:
            canon = rng.integers(0, NUM_CLASSES, size=(250, 200))
            merged = dataio.merge_classes(dataio.canonical_to_raw(canon, parser), parser)
            assert onehot(merged)
            sample = dataio.PairedSample(np.zeros((3, 250, 200), np.float32), None,
                                         np.zeros((1, 250, 200), np.float32), merged, "x")
            padded = dataio.preprocess_pair(sample).layout
            assert onehot(padded)
            assert onehot(dataio.unpad_layout(padded))
            for size in (128, 64, 32, 16, 8, 4, 2):
                assert onehot(dataio.downsample_layout(padded, (size, size)))
            transforms += 10
        for s in make_fixture(9, 3, 64):
            assert onehot(s.layout)
        d["transforms checked"] = transforms

        # bounds
        for _ in range(200):
            h, w = (int(v) for v in rng.integers(1, 13, size=2))
            y, layout = random_case(rng, h, w)
            f = rng.normal(size=(h, w)) * float(rng.uniform(0.01, 100))
            c = arweight.affinity_vector(t(f), t(layout)).numpy()
            assert (np.abs(c) <= 1.0).all()
            assert 0 <= arweight.ar_loss(t(y), t(f), t(layout)).item() <= 4 * 2 * NUM_CLASSES
        assert worst_scale < 1e-6
        assert worst_perm < 1e-12


def test_criterion_4_architecture():
    with criterion(4, "generator, discriminator and SI contracts", 60) as d:
        torch.manual_seed(0)
        gen = Generator(GeneratorConfig()).eval()
        s = make_fixture(1, 1, 256)[0]
        photo = torch.from_numpy(s.photo)[None]
        sal = torch.from_numpy(s.saliency)[None]
        with torch.no_grad():
            chain = [tuple(x.shape[-3:]) for x in gen.encode(photo, sal, return_all=True)]
        d["bottleneck"] = chain[-1]
        assert [c[-1] for c in chain] == [128, 64, 32, 16, 8, 4, 2]
        assert chain[-1] == (512, 2, 2)
        out = generate(gen, s.photo, s.saliency, s.layout)
        assert out.shape == (1, 256, 256)
        assert out.min().item() > -1 and out.max().item() < 1

        disc = Discriminator()
        with torch.no_grad():
            logits = disc(photo, sal, out[None])
        d["patch logits"] = tuple(logits.shape[-2:])
        assert logits.shape == (1, 1, 30, 30)

        x = torch.randn(1, 5, 9, 7, dtype=torch.float64)
        xhat = instance_standardize(x)
        assert torch.equal(si_modulate(xhat, torch.ones_like(xhat), torch.zeros_like(xhat)), xhat)


def test_criterion_5_schedule_and_weights():
    with criterion(5, "learning-rate schedule and loss weighting", 1) as d:
        c = TrainConfig()
        lrs = [trainer.lr_schedule(e, c) for e in (1, 100, 150)]
        d["lr(1,100,150)"] = lrs
        assert lrs[0] == 2e-4 and lrs[1] == 2e-4
        assert abs(lrs[2] - 2e-4 * 51 / 101) <= 1e-18
        total, _ = losses.total_generator_loss({k: 1.0 for k in losses.TERMS}, c.weights)
        d["unit total"] = total
        assert total == 212.0


def _overfit_run(samples, config, networks):
    history = []
    state = trainer.fit(samples, config, networks=networks, history=history)
    return history, trainer.encode_checkpoint(state)


def test_criterion_6_overfit_smoke():
    with criterion(6, "500-step overfit on the 64x64 fixture, reproducible", 900) as d:
        samples = make_fixture(7, 4, 64)
        config = TrainConfig(epochs=125, gen_widths=(32, 64, 128, 256, 256),
                             disc_widths=(32, 64, 128, 256), si_hidden=64, seed=0)
        assert config.weights == losses.LossWeights()
        networks = trainer.LossNetworks(stub_extractor(), stub_parser())
        hist_a, ckpt_a = _overfit_run(samples, config, networks)
        assert len(hist_a) == 500
        first = hist_a[0][2]["content"]
        last = float(np.mean([h[2]["content"] for h in hist_a if h[0] == config.epochs]))
        drop = 1 - last / first
        d["content step1"] = f"{first:.4f}"
        d["final-epoch mean"] = f"{last:.4f}"
        d["drop"] = f"{drop:.1%}"
        hist_b, ckpt_b = _overfit_run(samples, config, networks)
        same = hist_a == hist_b and ckpt_a == ckpt_b
        d["bit-identical rerun"] = same
        assert drop >= 0.8
        assert same


def test_criterion_7_metric_self_tests():
    with criterion(7, "SSIM and masked MAE self-tests", 60) as d:
        rng = np.random.default_rng(3)
        worst_self = 0.0
        for _ in range(20):
            x = rng.uniform(-1, 1, size=(int(rng.integers(11, 40)), int(rng.integers(11, 40))))
            worst_self = max(worst_self, abs(metrics.ssim(x, x) - 1.0))
        d["|ssim(x,x)-1|"] = f"{worst_self:.1e}"
        worst_const = 0.0
        for m1, m2 in ((-0.5, 0.5), (0.0, 0.0), (-1.0, 1.0), (0.3, -0.7)):
            got = metrics.ssim(np.full((16, 16), m1), np.full((16, 16), m2))
            worst_const = max(worst_const, abs(got - oracles.constant_ssim((m1 + 1) / 2, (m2 + 1) / 2)))
        d["constant-image err"] = f"{worst_const:.1e}"
        worst_mae = 0.0
        for _ in range(50):
            a, b = rng.uniform(-1, 1, size=(2, 12, 10))
            layout = labels_to_onehot(rng.integers(0, NUM_CLASSES, size=(12, 10)))
            per_class, overall = metrics.masked_mae(a, b, layout)
            counts = layout.sum(axis=(1, 2))
            worst_mae = max(worst_mae, abs((per_class * counts).sum() / counts.sum() - overall))
        d["mae recombination err"] = f"{worst_mae:.1e}"
        assert worst_self <= 1e-9
        assert worst_const <= 1e-12
        assert worst_mae <= 1e-9


CLI_CONFIG = """\
data.root = {root}
train.epochs = 3
train.checkpoint_every = 1
model.gen_widths = 8,16,16,16,16,16,16
model.disc_widths = 8,16,16,16
model.si_hidden = 8
"""


def _cli(*argv):
    proc = subprocess.run([sys.executable, "-m", "facesketch", *map(str, argv)],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def test_criterion_8_cli_end_to_end(tmp_path):
    with criterion(8, "fixtures -> train -> infer -> eval through the CLI", 300) as d:
        data = tmp_path / "data"
        code, _, err = _cli("fixtures", "--out", data, "--n", 3, "--seed", 11)
        assert code == 0, err
        cfg = tmp_path / "run.cfg"
        cfg.write_text(CLI_CONFIG.format(root=data))
        code, out, err = _cli("train", "--config", cfg, "--out", tmp_path / "runs")
        assert code == 0, err
        run_dir = tmp_path / "runs" / out.strip().splitlines()[-1].split("/")[-1]
        assert (run_dir / "latest.ckpt").is_file()
        code, _, err = _cli("infer", "--checkpoint", run_dir / "latest.ckpt",
                            "--input-dir", data / "test", "--out-dir", tmp_path / "pred")
        assert code == 0, err
        test = data / "test"
        code, out, err = _cli("eval", "--pred-dir", tmp_path / "pred", "--target-dir", test / "sketches",
                              "--layout-dir", test / "parsing", "--report", tmp_path / "pred.csv")
        assert code == 0, err
        d["trained model"] = out.strip()
        code, out, err = _cli("eval", "--pred-dir", test / "sketches", "--target-dir", test / "sketches",
                              "--layout-dir", test / "parsing", "--report", tmp_path / "self.csv")
        assert code == 0, err
        mean = next(l for l in (tmp_path / "self.csv").read_text().splitlines() if l.startswith("mean,"))
        self_ssim = float(mean.split(",")[1])
        d["pred=target ssim"] = self_ssim
        assert abs(self_ssim - 1.0) < 1e-9
