"""Command-line entry points: render, validate, bench, serve, trace.

Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.
"""

import argparse
import json
import sys
import time

import numpy as np


def _parse_dims(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"dims must look like 512x512 (got {text!r})") from exc


def _parse_pixel(text):
    try:
        x, y = text.split(",")
        return int(x), int(y)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"pixel must look like X,Y (got {text!r})") from exc


def _parse_region(text):
    try:
        a = [int(x) for x in text.split(",")]
        if len(a) != 4:
            raise ValueError
        return tuple(a)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"region must look like x0,y0,x1,y1 (got {text!r})") from exc


def build_parser():
    p = argparse.ArgumentParser(
        prog="prismray",
        description="Ray trace and sculpt displacement-mapped surfaces")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scene", help="scene description JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dt", type=float, default=None,
                        help="sample spacing relative to scene scale")
        sp.add_argument("--threads", type=int, default=None)

    r = sub.add_parser("render", help="render a frame")
    common(r)
    r.add_argument("-o", "--output", default="out.png")
    r.add_argument("--pfm", default=None, help="also write a linear PFM")
    r.add_argument("--spp", type=int, default=4)
    r.add_argument("--dims", type=_parse_dims, default=None)
    r.add_argument("--region", type=_parse_region, default=None,
                   help="render only x0,y0,x1,y1")
    r.add_argument("--no-jitter", action="store_true")

    v = sub.add_parser("validate", help="run the property checks")
    common(v)
    v.add_argument("--rays", type=int, default=10000)

    b = sub.add_parser("bench", help="benchmark primary and beauty passes")
    common(b)
    b.add_argument("--dims", type=_parse_dims, default=(512, 512))
    b.add_argument("--spp", type=int, default=1)

    s = sub.add_parser("serve", help="run the sculpting service")
    common(s)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8123)

    t = sub.add_parser("trace", help="dump march steps for one pixel's ray")
    common(t)
    t.add_argument("--pixel", type=_parse_pixel, required=True)
    t.add_argument("-o", "--output", default=None,
                   help="write JSON lines here instead of stdout")
    return p


def _load(args):
    from .scene import SceneDescription, build_scene
    desc = SceneDescription.from_file(args.scene)
    if args.dt is not None:
        if args.dt <= 0:
            raise ValueError("--dt must be positive")
        desc.dt = args.dt
    if args.threads is not None:
        import numba
        numba.set_num_threads(max(1, min(args.threads,
                                         numba.config.NUMBA_NUM_THREADS)))
    return build_scene(desc)


def cmd_render(args):
    from .render import Camera, render_frame, render_region, Framebuffer, \
        resolve_and_write
    from .render_kernels import intersect_only_k
    scene = _load(args)
    dims = args.dims
    cam = Camera.from_description(scene.description.camera,
                                  *(dims or (None, None)))
    t0 = time.perf_counter()
    if args.region:
        fb = Framebuffer.empty(cam.width, cam.height)
        render_region(scene, cam, fb, args.region, args.spp, args.seed,
                      jitter=not args.no_jitter)
    else:
        fb = render_frame(scene, cam, args.spp, args.seed,
                          jitter=not args.no_jitter)
    total_ms = (time.perf_counter() - t0) * 1e3

    isct_ms = float("nan")
    if scene.n_prisms:
        right, up, fwd = cam.basis()
        out_n = np.zeros((cam.height, cam.width), dtype=np.int64)
        tree = scene.bvh
        p = scene.prisms
        t1 = time.perf_counter()
        intersect_only_k(0, 0, cam.width, cam.height, args.seed, 0,
                         np.ascontiguousarray(cam.position),
                         np.ascontiguousarray(right),
                         np.ascontiguousarray(up),
                         np.ascontiguousarray(fwd),
                         cam.tan_half_fov, cam.width, cam.height,
                         tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
                         p["base"], p["top"], p["gnrm"], p["aabb"],
                         1e-6 * scene.scene_scale, out_n)
        isct_ms = (time.perf_counter() - t1) * 1e3

    resolve_and_write(fb, args.output, "png")
    if args.pfm:
        resolve_and_write(fb, args.pfm, "pfm")
    n_rays = cam.width * cam.height * args.spp
    share = isct_ms / total_ms * 100.0 if total_ms > 0 else float("nan")
    print(f"wrote {args.output}  dims={cam.width}x{cam.height} "
          f"spp={args.spp} dt={scene.description.dt} seed={args.seed}")
    print(f"render {total_ms:.1f} ms total; prism-intersect pass "
          f"{isct_ms:.1f} ms ({share:.1f}% of total); "
          f"{n_rays / max(total_ms, 1e-9) / 1e3:.2f} Mrays/s primary budget")
    return 0


def cmd_validate(args):
    from . import validate as val
    scene = _load(args)
    rows = val.run_all(scene, n_rays=args.rays, seed=args.seed)
    width = max(len(r[0]) for r in rows)
    failed = 0
    for name, ok, detail in rows:
        mark = "PASS" if ok else "FAIL"
        if not ok:
            failed += 1
        print(f"[{mark}] {name:<{width}}  {detail}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 0 if failed == 0 else 1


def cmd_bench(args):
    from .render import Camera, render_frame, Framebuffer
    from .render_kernels import primary_hits_k, intersect_only_k
    scene = _load(args)
    w, h = args.dims
    cam = Camera.from_description(scene.description.camera, w, h)
    right, up, fwd = cam.basis()
    cargs = (np.ascontiguousarray(cam.position),
             np.ascontiguousarray(right), np.ascontiguousarray(up),
             np.ascontiguousarray(fwd), cam.tan_half_fov, w, h)
    tree = scene.bvh
    p = scene.prisms
    model = scene.description.mesh_path.stem if scene.description.mesh_path \
        else "empty"
    print("model,dims,dt,phase,ms,mrays_per_sec")

    def row(phase, ms, rays):
        print(f"{model},{w}x{h},{scene.description.dt},{phase},"
              f"{ms:.2f},{rays / max(ms, 1e-9) / 1e3:.3f}")

    out_n = np.zeros((h, w), dtype=np.int64)
    t0 = time.perf_counter()
    intersect_only_k(0, 0, w, h, args.seed, 0, *cargs,
                     tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
                     p["base"], p["top"], p["gnrm"], p["aabb"],
                     1e-6 * scene.scene_scale, out_n)
    row("isect", (time.perf_counter() - t0) * 1e3, w * h)

    out_t = np.zeros((h, w))
    out_f = np.zeros((h, w), dtype=np.int64)
    t0 = time.perf_counter()
    primary_hits_k(0, 0, w, h, args.seed, 0, *cargs,
                   tree.nodes_bounds, tree.nodes_meta, tree.prim_order,
                   *scene.kernel_args(), scene.dt_world, True,
                   1e-6 * scene.scene_scale, out_t, out_f)
    row("primary", (time.perf_counter() - t0) * 1e3, w * h)

    t0 = time.perf_counter()
    render_frame(scene, cam, args.spp, args.seed)
    # beauty traces roughly 4 rays per pixel sample
    row("beauty", (time.perf_counter() - t0) * 1e3, w * h * args.spp * 4)
    return 0


def cmd_serve(args):
    from .scene import SceneDescription
    from .service import serve
    scene = _load(args)
    with open(args.scene, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    print(f"serving {args.scene} on http://{args.host}:{args.port}/ "
          f"(ws at /ws)")
    serve(scene, doc, host=args.host, port=args.port, seed=args.seed)
    return 0


def cmd_trace(args):
    from .render import Camera
    from .march import march_trace, trace_to_jsonl
    from .intersect import Ray
    scene = _load(args)
    cam = Camera.from_description(scene.description.camera)
    x, y = args.pixel
    if not (0 <= x < cam.width and 0 <= y < cam.height):
        raise ValueError(f"pixel {x},{y} outside {cam.width}x{cam.height}")
    origin, direction = cam.primary_ray(x, y)
    ray = Ray(origin, direction, 1e-6 * scene.scene_scale, np.inf)
    # visit prisms in interval order, trace until the first hit
    from . import kernels
    p = scene.prisms
    entries = []
    for f in range(scene.n_prisms):
        status, t_lo, t_hi, _kind = kernels.prism_entry_exit_k(
            np.ascontiguousarray(origin), np.ascontiguousarray(direction),
            f, p["base"], p["top"], p["gnrm"], p["aabb"],
            ray.t_near, ray.t_far)
        if status:
            entries.append((t_lo, f))
    entries.sort()
    lines = []
    for _t, f in entries:
        rec, steps = march_trace(ray, scene.prism(f), scene.dispmap,
                                 scene.dt_world, colormap=scene.colormap)
        lines.append(trace_to_jsonl(steps, prism_id=f))
        if rec is not None:
            lines.append(json.dumps({
                "prism": f, "hit": True, "t": rec.t,
                "point": [float(v) for v in rec.point],
                "uv": [float(v) for v in rec.uv]}))
            break
    text = "\n".join(x for x in lines if x)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.output}")
    else:
        print(text)
    return 0


COMMANDS = {
    "render": cmd_render,
    "validate": cmd_validate,
    "bench": cmd_bench,
    "serve": cmd_serve,
    "trace": cmd_trace,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
