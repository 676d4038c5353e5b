import json

import numpy as np
import pytest

import prismray as pr
from prismray import demo
from prismray.dispmap import sample_bilinear
from prismray.render import Camera, render_frame
from prismray.service import EditSession, SessionError, StrokeEvent, create_app


@pytest.fixture()
def session(tmp_path):
    scene = demo.demo_sphere_scene(tmp_path, doc=demo.sphere_scene_doc(
        dims=(96, 96)))
    s = EditSession(scene, seed=4)
    s.define_brush("b", radius=4, strength=0.8, mode="max")
    return s


def test_pick_center_hits(session):
    picked = session.pick_uv(48, 48)
    assert picked is not None
    face, b, uv = picked
    assert 0 <= face < session.scene.n_prisms
    assert 0.0 <= uv[0] <= 1.0 and 0.0 <= uv[1] <= 1.0
    assert b.sum() == pytest.approx(1.0, abs=1e-6)


def test_pick_background_misses(session):
    assert session.pick_uv(1, 1) is None


def test_pick_base_mode(session):
    session.pick_mode = "base"
    picked = session.pick_uv(48, 48)
    assert picked is not None


def test_stroke_changes_picked_height(session):
    """End-to-end state oracle: after a max stroke at the picked uv, the
    published map samples higher there."""
    picked = session.pick_uv(48, 48)
    uv = picked[2]
    before = sample_bilinear(session.scene.dispmap, uv)
    res = session.apply_stroke(StrokeEvent(seq=1, brush="b", x=48, y=48))
    assert res is not None
    version, rect, pixel_rect, exceeded = res
    assert version == session.version
    assert not rect.empty
    session.frame_tick()   # publishes the snapshot
    after = sample_bilinear(session.scene.dispmap, uv)
    assert after > before
    assert not exceeded


def test_zero_strength_stroke_bumps_version(session):
    session.define_brush("z", radius=3, strength=0.0)
    v0 = session.version
    res = session.apply_stroke(StrokeEvent(seq=1, brush="z", x=48, y=48))
    assert res is not None
    assert session.version == v0 + 1
    assert np.array_equal(session.working_disp.data,
                          session.scene.dispmap.data)


def test_unknown_brush_and_stale_seq(session):
    with pytest.raises(SessionError, match="unknown brush"):
        session.apply_stroke(StrokeEvent(seq=1, brush="nope", x=48, y=48))
    assert session.apply_stroke(
        StrokeEvent(seq=2, brush="b", x=48, y=48)) is not None
    with pytest.raises(SessionError, match="stale"):
        session.apply_stroke(StrokeEvent(seq=2, brush="b", x=48, y=48))


def test_strokes_linearizable(tmp_path):
    """The final map equals the sequential application of the accepted
    strokes in sequence order."""
    scene_a = demo.demo_sphere_scene(tmp_path / "a")
    scene_b = demo.demo_sphere_scene(tmp_path / "b")
    strokes = [(0.30, 0.40), (0.32, 0.42), (0.35, 0.45), (0.31, 0.47)]

    sa = EditSession(scene_a, seed=1)
    sa.define_brush("b", radius=3, strength=0.5, mode="add")
    for i, (u, v) in enumerate(strokes):
        sa.apply_stroke(StrokeEvent(seq=i, brush="b", u=u, v=v))
    sa.frame_tick()

    work = scene_b.dispmap.copy()
    brush = pr.Brush(radius=3, strength=0.5, mode="add")
    for u, v in strokes:
        pr.apply_brush(work, (u, v), brush)
    assert np.array_equal(sa.scene.dispmap.data, work.data)


def test_bounds_exceeded_flag(tmp_path):
    doc = demo.sphere_scene_doc(world_scale=0.2, world_bias=0.02,
                                w_max=0.25)
    scene = demo.demo_sphere_scene(tmp_path, doc=doc)
    # shrink the budget artificially so a full-strength stroke exceeds it
    scene.prisms["wmax"][:] = 0.1
    s = EditSession(scene, seed=0)
    s.define_brush("b", radius=4, strength=1.0, mode="max")
    res = s.apply_stroke(StrokeEvent(seq=1, brush="b", u=0.4, v=0.4))
    assert res is not None
    assert res[3] is True   # accepted but flagged


def test_tick_renders_only_dirty_tiles(session):
    session.frame_tick()     # initial full-frame progressive pass
    res = session.apply_stroke(StrokeEvent(seq=1, brush="b", x=48, y=48))
    pixel_rect = res[2]
    tiles, stats = session.frame_tick()
    assert tiles
    for tile in tiles:
        assert tile.x < pixel_rect[2] and tile.x + tile.w > pixel_rect[0]
        assert tile.y < pixel_rect[3] and tile.y + tile.h > pixel_rect[1]
    assert stats.blas_ms == 0.0
    assert stats.edit_ms >= 0.0 and stats.rt_ms > 0.0


def test_idle_ticks_accumulate_monotonically(session):
    c0 = session.fb.counts.copy()
    session.frame_tick()
    c1 = session.fb.counts.copy()
    session.frame_tick()
    c2 = session.fb.counts.copy()
    assert np.all(c1 >= c0) and np.all(c2 >= c1)
    assert c2.min() >= 2


def test_tile_versions_never_regress(session):
    seen = {}
    for i in range(3):
        if i == 1:
            session.apply_stroke(StrokeEvent(seq=i, brush="b", x=48, y=48))
        tiles, _ = session.frame_tick()
        for t in tiles:
            key = (t.x, t.y)
            assert seen.get(key, -1) <= t.version
            seen[key] = t.version


def test_converged_equals_batch_render(tmp_path):
    """64 idle ticks reproduce a 64-spp batch render bit for bit."""
    doc = demo.sphere_scene_doc(dims=(48, 48))
    scene = demo.demo_sphere_scene(tmp_path, doc=doc)
    sess = EditSession(scene, seed=9)
    for _ in range(64):
        sess.frame_tick()
    cam = Camera.from_description(scene.description.camera)
    batch = render_frame(scene, cam, spp=64, seed=9)
    assert np.array_equal(sess.fb.accum, batch.accum)
    assert np.array_equal(sess.fb.counts, batch.counts)


def test_camera_motion_resets_convergence(session):
    session.frame_tick()
    assert session.fb.counts.max() > 0
    session.set_camera(position=[0.0, 1.2, 3.1])
    assert session.fb.counts.max() == 0


# -- WebSocket protocol -------------------------------------------------------

@pytest.fixture()
def client(tmp_path):
    from fastapi.testclient import TestClient
    scene = demo.demo_sphere_scene(tmp_path, doc=demo.sphere_scene_doc(
        dims=(64, 64)))
    doc = json.loads((tmp_path / "scene.json").read_text())
    app = create_app(scene, doc, seed=2, tick_interval=0.02)
    return TestClient(app)


def test_http_endpoints(client):
    assert client.get("/").status_code == 200
    doc = client.get("/scene").json()
    assert doc["mesh"] == "sphere.obj"


def test_ws_stroke_roundtrip(client):
    with client.websocket_connect("/ws") as ws:
        ws.send_text(json.dumps({"type": "brush.define", "id": "b",
                                 "radius": 4, "strength": 0.9,
                                 "mode": "add"}))
        ws.send_text(json.dumps({"type": "stroke", "seq": 1, "brush": "b",
                                 "x": 32, "y": 32, "pressure": 1.0}))
        got_picked = got_tile = got_stats = False
        blas = None
        for _ in range(300):
            msg = json.loads(ws.receive_text())
            if msg["type"] == "picked":
                got_picked = True
                assert 0 <= msg["u"] <= 1
            elif msg["type"] == "tile":
                got_tile = True
                assert {"version", "x", "y", "w", "h",
                        "png_base64"} <= set(msg)
            elif msg["type"] == "stats":
                got_stats = True
                blas = msg["blas_ms"]
            if got_picked and got_tile and got_stats:
                break
        assert got_picked and got_tile and got_stats
        assert blas == 0.0


def test_ws_bad_message_reports_error(client):
    with client.websocket_connect("/ws") as ws:
        ws.send_text("{not json")
        for _ in range(50):
            msg = json.loads(ws.receive_text())
            if msg["type"] == "error":
                break
        else:
            pytest.fail("no error message received")
        ws.send_text(json.dumps({"type": "wat"}))
        for _ in range(50):
            msg = json.loads(ws.receive_text())
            if msg["type"] == "error":
                assert "wat" in msg["message"]
                break
        else:
            pytest.fail("no error message received")
