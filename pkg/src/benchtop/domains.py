"""The five benchmark domains at desk scale.

Each domain ships a scene builder with pose randomization, task templates,
a time budget, and a manually designed evaluation success function that is
independent of anything the planner infers. Dimensions, budgets, and
randomization bounds live in domain_config.json (human-editable).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from . import predicate, robot
from .errors import UnknownDomain
from .geometry import BoxShape
from .transforms import Pose, random_rotation_euler
from .world import Body, Joint, Link, WorldState, make_robot_body, set_arm

GRAVITY = 9.81
DOMAIN_NAMES = ("balance", "catapult", "transport", "mailbox", "drawer")
_DOMAIN_SALT = {name: i + 101 for i, name in enumerate(DOMAIN_NAMES)}

# elbow-up, gripper pointing down over the middle of the workspace
HOME_CONFIG = robot.HOME_CONFIG


def load_config(path=None) -> dict:
    if path is not None:
        with open(path) as fh:
            return json.load(fh)
    text = resources.files("benchtop").joinpath("domain_config.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class DomainSpec:
    """Everything the pipeline needs to run one benchmark domain."""

    name: str
    tasks: tuple
    budget: float
    randomization: dict
    build: Callable[[int], WorldState]
    eval_success: Callable[[str, WorldState, WorldState], bool]
    variant: str = "train"


def make_domain(name: str, variant: str = "train", config_path=None) -> DomainSpec:
    cfg = load_config(config_path)
    builders = {
        "balance": _balance_spec,
        "catapult": _catapult_spec,
        "transport": _transport_spec,
        "mailbox": _mailbox_spec,
        "drawer": _drawer_spec,
    }
    if name not in builders:
        raise UnknownDomain(name)
    return builders[name](cfg, variant)


def _rng_for(name: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_DOMAIN_SALT[name], int(seed)]))


# ---------------------------------------------------------------------------
# Shared scene pieces
# ---------------------------------------------------------------------------

def _table_body(cfg) -> Body:
    tc = cfg["table"]
    half = np.asarray(tc["half_extents"])
    center = np.array([tc["center_xy"][0], tc["center_xy"][1], -half[2]])
    return Body("table", [Link("table", BoxShape(half), Pose.identity(), Pose(center, np.eye(3)))])


def _free_box(name: str, half, position, rotation=None) -> Body:
    pose = Pose(np.asarray(position), np.eye(3) if rotation is None else rotation)
    return Body(name, [Link(name, BoxShape(half), Pose.identity(), pose)], fixed=False)


def _bin_body(name: str, center_xy, inner_half_x, inner_half_y, wall_h, thickness=0.005) -> Body:
    cx, cy = center_xy
    floor_half = np.array([inner_half_x + 2 * thickness, inner_half_y + 2 * thickness, 0.005])
    links = [Link(name, BoxShape(floor_half), Pose.from_translation([0, 0, 0.005]),
                  Pose(np.array([cx, cy, 0.0]), np.eye(3)))]
    joints = []
    wz = 0.01 + wall_h / 2.0
    panels = [
        ("x+", [thickness, floor_half[1], wall_h / 2], [inner_half_x + thickness, 0, wz]),
        ("x-", [thickness, floor_half[1], wall_h / 2], [-inner_half_x - thickness, 0, wz]),
        ("y+", [floor_half[0], thickness, wall_h / 2], [0, inner_half_y + thickness, wz]),
        ("y-", [floor_half[0], thickness, wall_h / 2], [0, -inner_half_y - thickness, wz]),
    ]
    for tag, half, off in panels:
        lname = f"{name}/wall {tag}"
        links.append(Link(lname, BoxShape(half), Pose.identity()))
        joints.append(Joint("fixed", [0, 0, 1], Pose.from_translation(off), 0.0, None,
                            name, lname))
    return Body(name, links, joints)


def _assemble(cfg, bodies, seed, events=()) -> WorldState:
    robot_body = make_robot_body(Pose.identity())
    world = WorldState(bodies, robot_body, time=0.0, rng_seed=seed, events=events)
    set_arm(world, HOME_CONFIG, opening=robot.MAX_OPENING)
    return world


# ---------------------------------------------------------------------------
# Balance
# ---------------------------------------------------------------------------

def _balance_spec(cfg, variant) -> DomainSpec:
    c = cfg["balance"]

    def build(seed: int) -> WorldState:
        rng = _rng_for("balance", seed)
        block_center = np.array([*c["block_center_xy"], c["block_half_extents"][2]])
        bodies = [
            _free_box("bus", c["bus_half_extents"], c["bus_drop_point"],
                      random_rotation_euler(rng)),
            Body("block", [Link("block", BoxShape(c["block_half_extents"]),
                                Pose.identity(), Pose(block_center, np.eye(3)))]),
            _table_body(cfg),
        ]
        return _assemble(cfg, bodies, seed)

    def eval_success(task, init, final) -> bool:
        return predicate.check_on_top_of(final, "bus", "block")

    return DomainSpec("balance", ("balance the bus on the block",), c["budget"],
                      {"orientation": "uniform-euler"}, build, eval_success, variant)


# ---------------------------------------------------------------------------
# Catapult
# ---------------------------------------------------------------------------

@dataclass
class CatapultLaunch:
    """Scripted release: firing the button frees the spring-loaded arm.

    When the button slider passes 95% of its travel with the arm cocked, the
    arm snaps to its limit and everything resting on it follows an analytic
    45-degree ballistic arc whose speed grows with distance from the hinge.
    """

    omega: float
    release_angle: float

    def apply(self, world: WorldState) -> None:
        st = world.flags.setdefault("catapult", {"fired": False, "flights": {}})
        for name in list(st["flights"]):
            self._advance(world, st, name)
        if st["fired"]:
            return
        body = world.body("catapult")
        button = body.joint_with_child("button")
        arm = body.joint_with_child("catapult arm")
        if button.value < 0.95 * button.limits[1]:
            return
        if arm.value > arm.limits[0] + 1e-6:
            return
        st["fired"] = True
        hinge = (body.link(arm.parent_link).pose * arm.origin).position
        arm_aabb = _link_aabb(world, body.link("catapult arm"))
        payloads = []
        for other in world.movable_bodies():
            bb = _link_aabb(world, other.root)
            overlap = (bb.min[0] < arm_aabb.max[0] and bb.max[0] > arm_aabb.min[0]
                       and bb.min[1] < arm_aabb.max[1] and bb.max[1] > arm_aabb.min[1])
            if overlap and abs(bb.min[2] - arm_aabb.max[2]) < 0.01:
                payloads.append(other)
        arm.value = arm.limits[1]
        body.recompute_poses()
        for payload in payloads:
            self._launch(world, st, payload, hinge)
        world._contacts = None

    def _launch(self, world, st, payload, hinge):
        p0 = payload.root.pose.position.copy()
        d = float(np.hypot(p0[0] - hinge[0], p0[2] - hinge[2]))
        v = self.omega * d
        vx = vz = v / np.sqrt(2.0)
        z_land = world.table_top_z + 0.012
        disc = vz * vz + 2 * GRAVITY * max(p0[2] - z_land, 0.0)
        t_land = (vz + np.sqrt(disc)) / GRAVITY
        pts = []
        t = 0.25
        while t < t_land:
            pts.append([p0[0] + vx * t, p0[1], p0[2] + vz * t - 0.5 * GRAVITY * t * t])
            t += 0.25
        half_z = float(payload.root.shape.half_extents[2])
        pts.append([p0[0] + vx * t_land, p0[1], z_land + half_z + 0.02])
        st["flights"][payload.name] = pts

    def _advance(self, world, st, name):
        from .world import _settle_body
        pts = st["flights"][name]
        body = world.body(name)
        if pts:
            wp = pts.pop(0)
            body.set_root_pose(Pose(np.asarray(wp), body.root.pose.rotation))
            world._contacts = None
        if not pts:
            del st["flights"][name]
            _settle_body(world, body)


def _link_aabb(world, link):
    from .geometry import shape_aabb
    return shape_aabb(link.shape, world.shape_pose(link))


def catapult_bin_layout(cfg) -> list:
    """Bin centers computed from the analytic range map, one per band."""
    c = cfg["catapult"]
    hinge_x = c["base_center_xy"][0] + c["base_half_extents"][0] - 0.01
    omega = c["launch_omega"]
    out = []
    for d in c["band_centers"]:
        v = omega * d
        vx = vz = v / np.sqrt(2.0)
        z0 = 0.0575 + c["block_half_extents"][2]   # payload center on the cocked arm
        z_land = 0.012 + c["block_half_extents"][2]
        t = (vz + np.sqrt(vz * vz + 2 * GRAVITY * (z0 - z_land))) / GRAVITY
        out.append(hinge_x - d + vx * t)
    return out


def _catapult_spec(cfg, variant) -> DomainSpec:
    c = cfg["catapult"]
    bins = ("closest box", "middle box", "furthest box")
    tasks = tuple(
        "move the block onto the catapult arm, then press the button to shoot "
        f"the block into the {b}" for b in ("closest", "middle", "furthest"))

    def build(seed: int) -> WorldState:
        base_c = np.array([*c["base_center_xy"], 0.0])
        base_half = np.asarray(c["base_half_extents"])
        links = [Link("catapult", BoxShape(base_half),
                      Pose.from_translation([0, 0, base_half[2]]),
                      Pose(base_c, np.eye(3)))]
        joints = []
        # button: slides downward; value grows as it is pressed
        bh = np.asarray(c["button_half_extents"])
        links.append(Link("button", BoxShape(bh), Pose.identity()))
        joints.append(Joint("prismatic", [0, 0, -1],
                            Pose.from_translation([0, 0.045, 2 * base_half[2] + bh[2]]),
                            0.0, (0.0, c["button_travel"]), "catapult", "button"))
        ah = np.asarray(c["arm_half_extents"])
        links.append(Link("catapult arm", BoxShape(ah),
                          Pose.from_translation([-ah[0], 0, 0])))
        joints.append(Joint("revolute", [0, 1, 0],
                            Pose.from_translation([base_half[0] - 0.01, 0,
                                                   2 * base_half[2] + 0.0175]),
                            0.0, (0.0, c["arm_release_angle"]), "catapult", "catapult arm"))
        catapult = Body("catapult", links, joints)
        bodies = [catapult,
                  _free_box("yellow block", c["block_half_extents"],
                            [*c["block_start_xy"], c["block_half_extents"][2]])]
        centers = catapult_bin_layout(cfg)
        order = (0, 2, 1)  # scene lists closest, furthest, middle (paper prompt order)
        names = ("closest box", "furthest box", "middle box")
        halves = c["bin_inner_half_x"]
        for name, idx in zip(names, order):
            bodies.append(_bin_body(name, (centers[idx], c["base_center_xy"][1]),
                                    halves[idx], c["bin_inner_half_y"],
                                    c["bin_wall_height"]))
        bodies.append(_table_body(cfg))
        event = CatapultLaunch(c["launch_omega"], c["arm_release_angle"])
        return _assemble(cfg, bodies, seed, events=(event,))

    def eval_success(task, init, final) -> bool:
        target = next(b for b in bins if b.split()[0] in task)
        return predicate.check_inside(final, "yellow block", target)

    return DomainSpec("catapult", tasks, c["budget"], {"pose_randomization": None},
                      build, eval_success, variant)


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------

def transport_toy_extents(variant: str) -> list:
    """Parameterized box family; train and test splits are disjoint."""
    cfg = load_config()["transport"]
    lo, hi = cfg["toy_half_extent_range"]
    rng = np.random.default_rng(20230517)
    all_shapes = rng.uniform(lo, hi, size=(cfg["train_toys"] + cfg["test_toys"], 3))
    if variant == "test":
        return list(all_shapes[cfg["train_toys"]:])
    return list(all_shapes[:cfg["train_toys"]])


def _transport_spec(cfg, variant) -> DomainSpec:
    c = cfg["transport"]
    shapes = transport_toy_extents(variant)

    def build(seed: int) -> WorldState:
        rng = _rng_for("transport", seed)
        half = shapes[int(rng.integers(0, len(shapes)))]
        margin = float(np.max(half)) * 1.8
        cx, cy = c["right_bin_center_xy"]
        span_x = c["bin_inner_half"][0] - margin
        span_y = c["bin_inner_half"][1] - margin
        pos = np.array([cx + rng.uniform(-span_x, span_x),
                        cy + rng.uniform(-span_y, span_y),
                        0.012 + float(np.linalg.norm(half)) + 0.01])
        bodies = [
            _free_box("toy", half, pos, random_rotation_euler(rng)),
            _bin_body("left bin", c["left_bin_center_xy"], *c["bin_inner_half"],
                      c["bin_wall_height"]),
            _bin_body("right bin", c["right_bin_center_xy"], *c["bin_inner_half"],
                      c["bin_wall_height"]),
            _table_body(cfg),
        ]
        return _assemble(cfg, bodies, seed)

    def eval_success(task, init, final) -> bool:
        return predicate.check_inside(final, "toy", "left bin")

    return DomainSpec("transport", ("move the toy into the left bin",), c["budget"],
                      {"toy_position": "uniform in right bin",
                       "orientation": "uniform-euler", "shapes": len(shapes)},
                      build, eval_success, variant)


# ---------------------------------------------------------------------------
# Mailbox
# ---------------------------------------------------------------------------

def _mailbox_spec(cfg, variant) -> DomainSpec:
    c = cfg["mailbox"]

    def build(seed: int) -> WorldState:
        rng = _rng_for("mailbox", seed)
        fh = np.asarray(c["floor_half"])
        th = c["wall_thickness"]
        wh = c["wall_height"]
        wz = 0.01 + wh / 2.0
        links = [Link("mailbox", BoxShape(fh), Pose.from_translation([0, 0, 0.005]),
                      Pose(np.array([*c["center_xy"], 0.0]), np.eye(3)))]
        joints = []
        panels = [
            ("x+", [th / 2, fh[1], wh / 2], [fh[0] - th / 2, 0, wz]),
            ("x-", [th / 2, fh[1], wh / 2], [-fh[0] + th / 2, 0, wz]),
            ("y+", [fh[0] - th, th / 2, wh / 2], [0, fh[1] - th / 2, wz]),
            ("y-", [fh[0] - th, th / 2, wh / 2], [0, -fh[1] + th / 2, wz]),
        ]
        for tag, half, off in panels:
            name = f"mailbox/wall {tag}"
            links.append(Link(name, BoxShape(half), Pose.identity()))
            joints.append(Joint("fixed", [0, 0, 1], Pose.from_translation(off),
                                0.0, None, "mailbox", name))
        lid_half = np.asarray(c["lid_half"])
        links.append(Link("mailbox lid", BoxShape(lid_half),
                          Pose.from_translation([-lid_half[0], 0, 0])))
        joints.append(Joint("revolute", [0, 1, 0],
                            Pose.from_translation([fh[0] - th / 2, 0, 0.01 + wh + 0.005]),
                            0.0, (0.0, np.pi / 2), "mailbox", "mailbox lid"))
        hh = np.asarray(c["handle_half"])
        links.append(Link("mailbox lid handle", BoxShape(hh), Pose.identity()))
        joints.append(Joint("fixed", [0, 0, 1],
                            Pose.from_translation([-2 * lid_half[0] + 0.02, 0,
                                                   0.005 + hh[2]]),
                            0.0, None, "mailbox lid", "mailbox lid handle"))
        fah = np.asarray(c["flag_arm_half"])
        from .transforms import rotation_about_axis
        flag_origin = Pose(np.array([0.0, fh[1] + fah[0], wz + 0.02]),
                           rotation_about_axis([1, 0, 0], -np.pi / 2))
        links.append(Link("mailbox flag", BoxShape(fah),
                          Pose.from_translation([0, 0, fah[2]])))
        joints.append(Joint("revolute", [1, 0, 0], flag_origin, 0.0, (0.0, np.pi / 2),
                            "mailbox", "mailbox flag"))
        mailbox = Body("mailbox", links, joints)
        jitter = rng.uniform(-c["package_jitter"], c["package_jitter"], size=2)
        ph = np.asarray(c["package_half"])
        package = _free_box("amazon package", ph,
                            [c["package_nominal_xy"][0] + jitter[0],
                             c["package_nominal_xy"][1] + jitter[1], ph[2] + 0.005])
        return _assemble(cfg, [mailbox, package, _table_body(cfg)], seed)

    def eval_success(task, init, final) -> bool:
        return (predicate.check_inside(final, "amazon package", "mailbox")
                and predicate.check_deactivated(final, "mailbox lid")
                and predicate.check_activated(final, "mailbox flag"))

    return DomainSpec("mailbox", ("send the amazon package for return",), c["budget"],
                      {"package_jitter": c["package_jitter"]}, build, eval_success, variant)


# ---------------------------------------------------------------------------
# Drawer
# ---------------------------------------------------------------------------

def _drawer_spec(cfg, variant) -> DomainSpec:
    c = cfg["drawer"]
    drawers = ("bottom drawer", "middle drawer", "top drawer")
    objects = dict(c["objects"])
    tasks = tuple(f"move the {obj} into the {dr}" for obj in objects for dr in drawers)

    def build(seed: int) -> WorldState:
        rng = _rng_for("drawer", seed)
        cx, cy = c["cabinet_center_xy"]
        hx, hy = c["cabinet_half_xy"]
        slot = c["slot_height"]
        top_z = 0.01 + 3 * slot
        links = [Link("drawer", BoxShape([0.01, hy, top_z / 2]),
                      Pose.from_translation([hx - 0.01, 0, top_z / 2]),
                      Pose(np.array([cx, cy, 0.0]), np.eye(3)))]
        joints = []
        for tag, off in (("y+", hy - 0.01), ("y-", -(hy - 0.01))):
            name = f"drawer/side {tag}"
            links.append(Link(name, BoxShape([hx, 0.01, top_z / 2]), Pose.identity()))
            joints.append(Joint("fixed", [0, 0, 1],
                                Pose.from_translation([0, off, top_z / 2]),
                                0.0, None, "drawer", name))
        links.append(Link("drawer/top", BoxShape([hx, hy, 0.0075]), Pose.identity()))
        joints.append(Joint("fixed", [0, 0, 1], Pose.from_translation([0, 0, top_z + 0.0075]),
                            0.0, None, "drawer", "drawer/top"))
        tf = np.asarray(c["tray_floor_half"])
        twh = c["tray_wall_height"]
        hh = np.asarray(c["handle_half"])
        for k, tray in enumerate(drawers):
            base_z = 0.01 + k * slot
            links.append(Link(tray, BoxShape(tf), Pose.identity()))
            joints.append(Joint("prismatic", [-1, 0, 0],
                                Pose.from_translation([-0.01, 0, base_z + tf[2]]),
                                0.0, (0.0, c["tray_travel"]), "drawer", tray))
            wz = tf[2] + twh / 2.0
            panels = [
                ("x+", [0.005, tf[1], twh / 2], [tf[0] - 0.005, 0, wz]),
                ("x-", [0.005, tf[1], twh / 2], [-tf[0] + 0.005, 0, wz]),
                ("y+", [tf[0] - 0.01, 0.005, twh / 2], [0, tf[1] - 0.005, wz]),
                ("y-", [tf[0] - 0.01, 0.005, twh / 2], [0, -tf[1] + 0.005, wz]),
            ]
            for tag, half, off in panels:
                name = f"{tray}/wall {tag}"
                links.append(Link(name, BoxShape(half), Pose.identity()))
                joints.append(Joint("fixed", [0, 0, 1], Pose.from_translation(off),
                                    0.0, None, tray, name))
            links.append(Link(f"{tray} handle", BoxShape(hh), Pose.identity()))
            joints.append(Joint("fixed", [0, 0, 1],
                                Pose.from_translation([-tf[0] - 0.03, 0, 0.025]),
                                0.0, None, tray, f"{tray} handle"))
        cabinet = Body("drawer", links, joints)
        bodies = [cabinet]
        for (name, half), slot_y in zip(objects.items(), c["object_slots_y"]):
            jitter = rng.uniform(-c["object_jitter"], c["object_jitter"], size=2)
            bodies.append(_free_box(name, half,
                                    [c["object_row_x"] + jitter[0], slot_y + jitter[1],
                                     half[2] + 0.003]))
        bodies.append(_table_body(cfg))
        return _assemble(cfg, bodies, seed)

    def eval_success(task, init, final) -> bool:
        obj = next(o for o in objects if o in task)
        drawer = next(d for d in drawers if d in task)
        return predicate.check_inside(final, obj, drawer)

    return DomainSpec("drawer", tasks, c["budget"],
                      {"object_jitter": c["object_jitter"], "slots_y": c["object_slots_y"]},
                      build, eval_success, variant)
