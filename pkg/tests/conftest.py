import json

import numpy as np
import pytest

from freeinsert import DepthMap, NoiseSchedule, Placement, RenderedObject, toy_backend
from freeinsert.backends import ConditioningSet, IdentityVae
from freeinsert.images import save_image
from freeinsert.request import CompositeRequest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def bg64():
    r = np.random.default_rng(7)
    return r.uniform(0.2, 0.8, (64, 64, 3))


@pytest.fixture
def object_image():
    r = np.random.default_rng(9)
    return r.uniform(0.0, 1.0, (24, 24, 3))


def make_render(size=16, opaque_box=(4, 12), depth_value=0.8, seed=3, view_tag="azimuth=30"):
    r = np.random.default_rng(seed)
    rgba = np.zeros((size, size, 4))
    rgba[..., :3] = r.uniform(0.0, 1.0, (size, size, 3))
    a, b = opaque_box
    rgba[a:b, a:b, 3] = 1.0
    return RenderedObject(rgba=rgba, depth=DepthMap(np.full((size, size), depth_value)), view_tag=view_tag)


@pytest.fixture
def render16():
    return make_render()


@pytest.fixture
def transparent_render():
    rgba = np.zeros((16, 16, 4))
    rgba[..., :3] = 0.5
    return RenderedObject(rgba=rgba, depth=DepthMap(np.zeros((16, 16))), view_tag="clear")


@pytest.fixture
def flat_depth():
    return DepthMap(np.zeros((64, 64)))


@pytest.fixture
def cond(flat_depth):
    return ConditioningSet(prompt_text="a photo of a mug", depth=flat_depth, guidance_weight=1.0)


@pytest.fixture
def schedule50():
    return NoiseSchedule.default(50)


@pytest.fixture
def schedule8():
    return NoiseSchedule.default(8)


@pytest.fixture
def toy64():
    return toy_backend(seed=5, latent_shape=(3, 64, 64))


@pytest.fixture
def identity_vae():
    return IdentityVae()


def make_request(bg, obj, render, **kwargs):
    defaults = dict(
        object_image=obj,
        background=bg,
        render=render,
        placement=Placement(x=20, y=20, scale=1.0),
        prompt="a photo of a cube",
        seed=11,
        dilate_radius=4,
    )
    defaults.update(kwargs)
    return CompositeRequest(**defaults)


@pytest.fixture
def basic_request(bg64, object_image, render16):
    return make_request(bg64, object_image, render16)


def write_asset_tree(root, num_objects=2, num_backgrounds=2, num_steps=6, pairs="cross", seed=0):
    """Write a tiny on-disk asset tree plus a benchmark manifest JSON."""
    root.mkdir(parents=True, exist_ok=True)
    objects = []
    for i in range(num_objects):
        r = np.random.default_rng(100 + i)
        obj_png = root / f"object_{i}.png"
        save_image(r.uniform(0, 1, (24, 24, 3)), obj_png)
        render = make_render(seed=200 + i, view_tag="azimuth=30")
        render_png = root / f"render_{i}.png"
        save_image(render.rgba, render_png)
        depth_npy = root / f"depth_{i}.npy"
        np.save(depth_npy, render.depth.values)
        objects.append(
            {
                "id": f"obj{i}",
                "image": obj_png.name,
                "renders": [{"rgba": render_png.name, "depth": depth_npy.name, "view_tag": "azimuth=30"}],
            }
        )
    backgrounds = []
    for i in range(num_backgrounds):
        r = np.random.default_rng(300 + i)
        bg_png = root / f"bg_{i}.png"
        save_image(r.uniform(0.2, 0.8, (64, 64, 3)), bg_png)
        backgrounds.append({"id": f"bg{i}", "path": bg_png.name})

    manifest = {
        "objects": objects,
        "backgrounds": backgrounds,
        "pairs": pairs,
        "placement": {"x": 20, "y": 20, "scale": 1.0},
        "config": {
            "num_steps": num_steps,
            "seed": seed,
            "backend_profile": "toy",
            "dilate_radius": 4,
        },
    }
    manifest_path = root / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


import re


def pytest_runtest_logreport(report):
    """One visible PASS/FAIL/SKIP line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    m = re.match(r"test_(p\d+)_(.*)", name)
    if not m:
        return
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.skipped:
        status = "SKIP (" + (report.longrepr[2].split("Skipped: ", 1)[-1] if report.longrepr else "") + ")"
    else:
        return
    print(f"\n[acceptance] {m.group(1).upper()} {m.group(2).replace('_', ' ')}: {status}")
