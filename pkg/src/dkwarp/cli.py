"""Command-line entry point: interpolate, gradcheck, overfit, synth, metrics.

Exit codes: 0 success, 1 runtime failure (or failed gradient check),
2 input validation error, 3 dimension mismatch.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import tensor
from .blend import blend
from .demo import DemoConfig, DivergenceError, run_overfit, synthetic_triple
from .flow import project_flow, synthetic_flow
from .grads import COARSE_STEP, COARSE_THRESHOLD, finite_difference_audit
from .losses import format_metrics, psnr, ssim
from .warp import GEOMETRY, identity_kernels, warp_frame, zero_offsets

log = logging.getLogger("dkwarp")


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _load(path, loader, what):
    if not os.path.isfile(path):
        raise CliError(f"{what}: no such file: {path}")
    try:
        return loader(path)
    except (tensor.TensorFormatError, ValueError, OSError) as exc:
        raise CliError(f"{what}: {path}: {exc}") from None


def load_any(path, what):
    """PPM image or tensor file, sniffed by magic bytes."""
    if not os.path.isfile(path):
        raise CliError(f"{what}: no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    loader = tensor.read_tensor if head == tensor.MAGIC else tensor.read_image
    return _load(path, loader, what)


def _expect(arr, path, what, channels, hw):
    if arr.shape[0] != channels:
        raise CliError(f"{what}: {path}: expected {channels} channels, got {arr.shape[0]}")
    if arr.shape[1:] != hw:
        raise CliError(f"{what}: {path}: size {arr.shape[1:]} does not match frame size {hw}", code=3)
    return arr


def _check_kernel_size(args):
    if args.kernel_size != GEOMETRY.r:
        raise CliError(f"--kernel-size must be {GEOMETRY.r}, got {args.kernel_size}")


def cmd_interpolate(args):
    _check_kernel_size(args)
    prev = _load(args.prev, tensor.read_image, "--prev")
    nxt = _load(args.next, tensor.read_image, "--next")
    hw = prev.shape[1:]
    _expect(nxt, args.next, "--next", 3, hw)

    def opt(path, flag, channels, default):
        if path is None:
            return default
        return _expect(_load(path, tensor.read_tensor, flag), path, flag, channels, hw)

    if args.project_flows:
        if not (args.flow_fwd and args.flow_bwd):
            raise CliError("--project-flows needs --flow-fwd and --flow-bwd")
        fwd = opt(args.flow_fwd, "--flow-fwd", 2, None)
        bwd = opt(args.flow_bwd, "--flow-bwd", 2, None)
        f_prev, f_next, report = project_flow(fwd, bwd)
        log.info("projection: %d holes, %d collisions", report.hole_count, report.collision_count)
    else:
        if not (args.flow_prev and args.flow_next):
            raise CliError("give --flow-prev and --flow-next, or --project-flows with --flow-fwd/--flow-bwd")
        f_prev = opt(args.flow_prev, "--flow-prev", 2, None)
        f_next = opt(args.flow_next, "--flow-next", 2, None)
    R = GEOMETRY.R
    h, w = hw
    k_prev = opt(args.kernels_prev, "--kernels-prev", R, identity_kernels(h, w))
    k_next = opt(args.kernels_next, "--kernels-next", R, identity_kernels(h, w))
    o_prev = opt(args.offsets_prev, "--offsets-prev", 2 * R, zero_offsets(h, w))
    o_next = opt(args.offsets_next, "--offsets-next", 2 * R, zero_offsets(h, w))
    occ = opt(args.occ, "--occ", 1, np.full((1, h, w), 0.5))
    if not np.all((occ >= 0) & (occ <= 1)):
        raise CliError(f"--occ: {args.occ}: values outside [0, 1]")
    gt = None
    if args.gt:
        gt = _expect(_load(args.gt, tensor.read_image, "--gt"), args.gt, "--gt", 3, hw)

    w_prev = warp_frame(prev, f_prev, k_prev, o_prev, workers=args.workers)
    w_next = warp_frame(nxt, f_next, k_next, o_next, workers=args.workers)
    out = blend(w_prev, w_next, occ[0])
    tensor.write_image(out, args.out)
    if gt is not None:
        print(format_metrics(psnr(out, gt), ssim(out, gt)))
    return 0


def cmd_gradcheck(args):
    if args.trials < 1:
        raise CliError(f"--trials must be >= 1, got {args.trials}")
    if not args.step > 0:
        raise CliError(f"--step must be > 0, got {args.step}")
    if args.step > COARSE_STEP:
        print(
            f"warning: step {args.step:g} is coarse; thresholds relaxed to {COARSE_THRESHOLD:g}",
            file=sys.stderr,
        )
    try:
        report = finite_difference_audit(trials=args.trials, step=args.step, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def cmd_overfit(args):
    try:
        cfg = DemoConfig(
            iterations=args.iterations,
            step_size=args.step_size,
            seed=args.seed,
            log_every=args.log_every,
            zero_grad=args.zero_grad,
            workers=args.workers,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.source == "files":
        paths = {
            "--prev": args.prev,
            "--gt": args.gt,
            "--next": args.next,
            "--flow-prev": args.flow_prev,
            "--flow-next": args.flow_next,
        }
        missing = [k for k, v in paths.items() if not v]
        if missing:
            raise CliError(f"--source files needs {', '.join(missing)}")
        frames = [_load(paths[k], tensor.read_image, k) for k in ("--prev", "--gt", "--next")]
        hw = frames[0].shape[1:]
        for k, f in zip(("--gt", "--next"), frames[1:]):
            _expect(f, paths[k], k, 3, hw)
        flows = [
            _expect(_load(paths[k], tensor.read_tensor, k), paths[k], k, 2, hw)
            for k in ("--flow-prev", "--flow-next")
        ]
    else:
        if args.size < 11:
            raise CliError("--size must be >= 11 (SSIM window)")
        kind = args.source.split("-", 1)[1]
        frames, flows = synthetic_triple(
            kind, args.size, args.seed, dx=args.dx, dy=args.dy, radians=args.radians
        )
    try:
        result = run_overfit(frames, flows, cfg)
    except DivergenceError as exc:
        raise CliError(str(exc), code=1) from None
    trace = "\n".join(result.trace_lines()) + "\n"
    if args.trace:
        tensor.atomic_write_bytes(args.trace, trace.encode())
    if args.out:
        tensor.write_image(result.output, args.out)
    print(f"initial loss: {result.initial_loss:.6e}")
    print(f"final loss: {result.losses[-1]:.6e}")
    print(f"initial PSNR: {result.initial_psnr:.4f} dB")
    print(format_metrics(result.final_psnr, result.final_ssim))
    return 0


def cmd_synth(args):
    h, w = args.height, args.width
    if h < 1 or w < 1:
        raise CliError("--height and --width must be positive")
    if args.kind == "translation":
        flow = synthetic_flow("translation", h, w, dx=args.dx, dy=args.dy)
    else:
        cx = (w - 1) / 2 if args.center_x is None else args.center_x
        cy = (h - 1) / 2 if args.center_y is None else args.center_y
        flow = synthetic_flow("rotation", h, w, center=(cx, cy), radians=args.radians)
    if not (args.out or args.frames_dir):
        raise CliError("nothing to write: give --out and/or --frames-dir")
    if args.frames_dir and h != w:
        raise CliError("--frames-dir needs a square frame (--height == --width)")
    if args.out:
        tensor.write_tensor(flow, args.out)
    if args.frames_dir:
        os.makedirs(args.frames_dir, exist_ok=True)
        frames, flows = synthetic_triple(args.kind, h, args.seed, dx=args.dx, dy=args.dy, radians=args.radians)
        for name, img in zip(("prev", "gt", "next"), frames):
            tensor.write_image(img, os.path.join(args.frames_dir, f"{name}.ppm"))
        tensor.write_tensor(flows[0], os.path.join(args.frames_dir, "flow_prev.dkw"))
        tensor.write_tensor(flows[1], os.path.join(args.frames_dir, "flow_next.dkw"))
    return 0


def cmd_metrics(args):
    if not args.peak > 0:
        raise CliError(f"--peak must be > 0, got {args.peak}")
    a = load_any(args.a, "a")
    b = load_any(args.b, "b")
    if a.shape != b.shape:
        raise CliError(f"{args.b}: shape {b.shape} does not match {args.a} {a.shape}", code=3)
    try:
        s = ssim(a, b, peak=args.peak)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    print(format_metrics(psnr(a, b, args.peak), s))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dkwarp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on this)")

    sp = sub.add_parser("interpolate", help="warp and blend two frames into the middle frame")
    sp.add_argument("--prev", required=True, help="frame t-1 (PPM)")
    sp.add_argument("--next", required=True, help="frame t+1 (PPM)")
    sp.add_argument("--flow-prev", help="flow from frame t to t-1 (tensor)")
    sp.add_argument("--flow-next", help="flow from frame t to t+1 (tensor)")
    sp.add_argument("--flow-fwd", help="flow from frame t-1 to t+1 (with --project-flows)")
    sp.add_argument("--flow-bwd", help="flow from frame t+1 to t-1 (with --project-flows)")
    sp.add_argument("--project-flows", action="store_true", help="build flows at t by projecting --flow-fwd/--flow-bwd")
    sp.add_argument("--kernels-prev", help="16-channel kernel tensor (default: identity)")
    sp.add_argument("--kernels-next", help="16-channel kernel tensor (default: identity)")
    sp.add_argument("--offsets-prev", help="32-channel offset tensor, x then y (default: zero)")
    sp.add_argument("--offsets-next", help="32-channel offset tensor, x then y (default: zero)")
    sp.add_argument("--occ", help="occlusion map for frame t-1 (1-channel tensor)")
    sp.add_argument("--gt", help="ground-truth middle frame; prints PSNR/SSIM")
    sp.add_argument("--out", required=True, help="interpolated frame (PPM)")
    sp.add_argument("--kernel-size", type=int, default=4, help="kernel region side; only 4 is supported")
    common(sp)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("gradcheck", help="finite-difference audit of the warp gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=100, help="random instances to audit")
    sp.add_argument("--step", type=float, default=1e-5, help="central-difference step")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("overfit", help="fit per-pixel maps to a frame triple by gradient descent")
    sp.add_argument(
        "--source", choices=("synthetic-translation", "synthetic-rotation", "files"), default="synthetic-translation"
    )
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--dx", type=float, default=3.7)
    sp.add_argument("--dy", type=float, default=-2.2)
    sp.add_argument("--radians", type=float, default=0.1)
    for flag in ("--prev", "--gt", "--next", "--flow-prev", "--flow-next"):
        sp.add_argument(flag)
    sp.add_argument("--iterations", type=int, default=500)
    sp.add_argument("--step-size", type=float, default=1e-3, help="initial gradient-descent step")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--log-every", type=int, default=50)
    sp.add_argument("--zero-grad", action="store_true", help="control run with gradients zeroed")
    sp.add_argument("--trace", help="loss trace output (iteration, loss, psnr per line)")
    sp.add_argument("--out", help="final interpolated frame (PPM)")
    common(sp)
    sp.set_defaults(func=cmd_overfit)

    sp = sub.add_parser("synth", help="write synthetic flows (and optionally a frame triple)")
    sp.add_argument("kind", choices=("translation", "rotation"))
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--dx", type=float, default=0.0)
    sp.add_argument("--dy", type=float, default=0.0)
    sp.add_argument("--center-x", type=float)
    sp.add_argument("--center-y", type=float)
    sp.add_argument("--radians", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="flow tensor output")
    sp.add_argument("--frames-dir", help="write prev/gt/next PPMs and exact flows here")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("metrics", help="PSNR and SSIM between two images or tensors")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--peak", type=float, default=1.0, help="peak signal value for PSNR/SSIM")
    sp.set_defaults(func=cmd_metrics)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
