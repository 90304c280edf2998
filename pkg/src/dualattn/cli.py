"""``dualattn`` command line: gradcheck, train, sample, attn, eval.

Exit codes: 0 success, 1 validation failure (bad config, caption, checkpoint
or argument), 2 numerical failure (non-finite loss, gradient check breach).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as CK
from . import config as C
from . import data as D
from . import gradcheck as G
from . import trainer as TR
from .attention import InvariantError
from .networks import sample_noise
from .tensor import NonFiniteError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

# one caption per colour plus two more, fixed so sample grids line up across runs
EVAL_SPECS = tuple(D.CaptionSpec(c, D.SHAPES[i % 4], D.SIZES[i % 2], D.BACKGROUNDS[(i // 2) % 2])
                   for i, c in enumerate(D.COLORS + ("red", "blue")))


class UsageError(ValueError):
    pass


def _out(text=""):
    print(text, flush=True)


def _err(text):
    print(f"dualattn: {text}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    results = G.run(args.scope, _out)
    failed = [r for r in results if not r.ok]
    if failed:
        _err("gradient check failed for: " + ", ".join(r.name for r in failed))
        return EXIT_NUMERIC
    _out(f"all {len(results)} items under threshold")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise C.ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_train_config(args):
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise C.ConfigError(f"cannot read config {args.config}: {exc}") from exc
        values.update(C.parse_text(text))
    values.update(_overrides(args.set))
    if args.outdir:
        values["outdir"] = args.outdir
    if args.steps is not None:
        values["steps"] = str(args.steps)
    if args.resume:
        # the checkpoint fixes the model; only flags given here are layered on top
        base = C.flatten(CK.load_checkpoint(args.resume).config)
        base = {k: C.format_value(v) for k, v in base.items()}
        values = {**base, **values}
    cfg, run = C.build(values)
    if args.ablate:
        cfg = C.with_ablations(cfg, args.ablate)
    return cfg, run


def sample_grid(params, cfg):
    tokens = np.stack([sp.tokens(cfg.enc.seq_len) for sp in EVAL_SPECS])
    z = sample_noise(len(EVAL_SPECS), np.random.default_rng([cfg.seed, 3]), cfg.gen.noise_dim)
    images, _ = TR.generate(params, cfg, tokens, z)
    return D.image_grid(images, cols=4)


def _param_counts(params):
    return {name: params.count(name + ".") for name in ("gen", "disc", "enc")}


def _rewrite_losses(path, upto):
    """Keep header and rows with step <= ``upto`` (resume after a checkpoint)."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= upto]
    path.write_text("".join(kept))


def cmd_train(args):
    cfg, run = resolve_train_config(args)
    outdir = Path(run["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.resolved").write_text(C.resolved_text(cfg, run))

    if args.resume:
        state = CK.load_checkpoint(args.resume)
        fresh = TR.init_state(cfg)
        if state.params.paths() != fresh.params.paths():
            raise CK.CheckpointError(f"{args.resume}: parameters do not match the config")
        state.config = cfg
    else:
        state = TR.init_state(cfg)
    counts = _param_counts(state.params)
    _out("params: " + " ".join(f"{k}={v}" for k, v in counts.items())
         + f" total={sum(counts.values())}")
    train_data, _ = TR.make_datasets(cfg)

    losses = outdir / "losses.csv"
    if args.resume:
        _rewrite_losses(losses, state.step)
    if not args.resume or not losses.exists():
        losses.write_text(",".join(TR.LOSS_COLUMNS) + "\n")
    last_ckpt = None

    def save(step):
        nonlocal last_ckpt
        last_ckpt = CK.save_checkpoint(state, outdir / f"ckpt_{step}.dtga")
        D.write_image(sample_grid(state.params, cfg), outdir / f"samples_{step}.ppm")

    with losses.open("a") as fh:
        try:
            while state.step < cfg.steps:
                rec = TR.train_step(state, train_data)
                fh.write(rec.csv_row() + "\n")
                TR.check_rho(state.params)
                step = rec.step
                if run["log_every"] and step % run["log_every"] == 0:
                    fh.flush()
                    _out(f"step {step}: loss_d={rec.loss_d:.4f} magp={rec.magp:.4f} "
                         f"loss_g={rec.loss_g:.4f} vis={rec.vis:.4f}")
                if ((run["ckpt_every"] and step % run["ckpt_every"] == 0)
                        or (run["sample_every"] and step % run["sample_every"] == 0)):
                    save(step)
        except NonFiniteError as exc:
            fh.flush()
            kept = f"; last checkpoint {last_ckpt}" if last_ckpt else ""
            _err(f"numerical failure at step {state.step}: {exc}{kept}")
            return EXIT_NUMERIC
    if last_ckpt is None or not last_ckpt.name.endswith(f"_{state.step}.dtga"):
        save(state.step)
    _out(f"done: {state.step} steps, checkpoint {last_ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample / attn / eval


def _caption_tokens(text, cfg):
    return D.tokenize(text, cfg.enc.seq_len)


def cmd_sample(args):
    state = CK.load_checkpoint(args.checkpoint)
    cfg = state.config
    tokens = _caption_tokens(args.caption, cfg)
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    outdir = Path(args.outdir)
    if args.n == 0:
        return EXIT_OK
    outdir.mkdir(parents=True, exist_ok=True)
    # z depends only on the seed, so swapping a caption word keeps the noise fixed
    z = sample_noise(args.n, np.random.default_rng(args.seed), cfg.gen.noise_dim)
    images, _ = TR.generate(state.params, cfg, np.repeat(tokens[None], args.n, axis=0), z)
    for k, img in enumerate(images):
        path = D.write_image(img, outdir / f"sample_{k}.ppm")
        _out(str(path))
    return EXIT_OK


def minmax(a):
    lo, hi = float(np.min(a)), float(np.max(a))
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.full(np.shape(a), 0.5)
    return (a - lo) / (hi - lo)


def channel_strip(weights, bar=4, height=16):
    """(C,) weights as a strip of C vertical bars, min-max normalised to [0, 1]."""
    row = np.repeat(minmax(np.asarray(weights)), bar)
    return np.tile(row, (height, 1))


def cmd_attn(args):
    state = CK.load_checkpoint(args.checkpoint)
    cfg = state.config
    tokens = _caption_tokens(args.caption, cfg)
    if not 1 <= args.layer <= cfg.gen.num_layers:
        raise UsageError(f"layer must be in 1..{cfg.gen.num_layers}, got {args.layer}")
    z = sample_noise(1, np.random.default_rng(args.seed), cfg.gen.noise_dim)
    image, maps = TR.generate(state.params, cfg, tokens[None], z)
    m = maps[args.layer - 1]
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    D.write_image(image[0], outdir / "image.ppm")
    written = 0
    for name in ("pixel_avg", "pixel_max"):
        a = getattr(m, name)
        if a is None:
            continue
        total = float(a[0].sum())
        if abs(total - 1.0) > 1e-9:
            raise InvariantError(f"{name} sums to {total}, expected 1")
        _out(f"{name}: sum={total:.12f}")
        up = TR.upsample_nearest(a[0], cfg.resolution)
        D.write_image(2.0 * minmax(up) - 1.0, outdir / f"{name}.ppm")
        written += 1
    for name in ("channel_avg", "channel_max"):
        a = getattr(m, name)
        if a is None:
            continue
        _out(f"{name}: sum={float(a[0].sum()):.12f}")
        D.write_image(2.0 * channel_strip(a[0]) - 1.0, outdir / f"{name}.ppm")
        written += 1
    if not written:
        raise UsageError("both attention modules are disabled in this checkpoint")
    _out(f"wrote {written} map(s) for layer {args.layer} to {outdir}")
    return EXIT_OK


def cmd_eval(args):
    state = CK.load_checkpoint(args.checkpoint)
    cfg = state.config
    _, test = TR.make_datasets(cfg)
    count = len(test) if args.captions is None else args.captions
    if not 1 <= count <= len(test):
        raise UsageError(f"--captions must be in 1..{len(test)}")
    specs = test.specs(range(count))
    rng = np.random.default_rng(args.seed)
    metrics = TR.evaluate_proxies(state.params, cfg, specs, args.n, rng)
    sys.stdout.write(metrics.lines())
    sys.stdout.write(f"step: {state.step}\n")
    if cfg.gen.pam:
        rate = TR.attention_foreground_rate(state.params, cfg, specs, rng)
        sys.stdout.write(f"attention_foreground: {rate!r}\n")
    sys.stdout.flush()
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="dualattn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("scope", choices=G.SCOPES + ("all",))
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train from a key = value config",
                       epilog="config keys: " + ", ".join(list(C.KEYS) + list(C.RUN_KEYS)))
    t.add_argument("config", nargs="?", help="config file (defaults apply when omitted)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--ablate", action="append", choices=sorted(C.ABLATIONS),
                   help="switch a component off (repeatable)")
    t.add_argument("--outdir")
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate images for one caption")
    s.add_argument("checkpoint")
    s.add_argument("caption")
    s.add_argument("-n", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--outdir", default="samples")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("attn", help="export attention maps as grayscale PPM")
    a.add_argument("checkpoint")
    a.add_argument("caption")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--layer", type=int, default=-1, help="1-based layer index (default last)")
    a.add_argument("--outdir", default="attn")
    a.set_defaults(func=cmd_attn)

    e = sub.add_parser("eval", help="proxy metrics on held-out captions")
    e.add_argument("checkpoint")
    e.add_argument("-n", type=int, default=4, help="noise draws per caption (>= 2)")
    e.add_argument("--captions", type=int, help="number of held-out captions (default all)")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "layer", None) == -1:
        try:
            args.layer = CK.load_checkpoint(args.checkpoint).config.gen.num_layers
        except CK.CheckpointError as exc:
            _err(str(exc))
            return EXIT_INVALID
    try:
        return args.func(args)
    except (NonFiniteError, InvariantError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (C.ConfigError, D.VocabularyError, CK.CheckpointError, UsageError, ValueError,
            OSError) as exc:
        _err(str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
