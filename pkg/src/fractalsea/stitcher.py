"""Map-scale stitching: plan vertex/gap tasks, execute them as a DAG.

Layout: vertex patches of size P sit on a grid with a fixed gap G between
adjacent patches (map side = n*P + (n-1)*G).  Gap strips and the center
squares between four patches are filled by inpainting with the flanking,
already-written pixels as known boundary content.

Three orderings share the same task seeds (hash of global seed, task kind,
grid coords) so any task covering the same region draws the same stream
regardless of pattern:

* ``parallel``  — stage 1 generates every vertex patch independently,
  stages 2-4 inpaint horizontal gaps, vertical gaps, then centers; the
  stage count is 4 for any grid with center gaps.
* ``raster`` / ``lawnmower`` — one composite tile task per grid cell in a
  strict sequential order (row-major, or boustrophedon).  Only the first
  tile is generated outright; every later tile is a single inpaint over its
  vertex patch plus the trailing gaps toward already-placed neighbors, with
  those neighbors' edge strips as known pixels.  The critical path equals
  the tile count.

Execution is deterministic for any worker count: each task's inputs
(seed, latent, known-region geometry) are fixed by the plan, pixel
ownership is exclusive, and dependencies gate reads of neighbor content.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError, PlanError, ValidationError
from .latent_field import LatentField, sample_latent
from .patchgen import ConditionalGenerator, RgbdPatch
from .rng import derive_seed

KIND_CODES = {"vertex": 1, "h_gap": 2, "v_gap": 3, "center_gap": 4}
PATTERNS = ("raster", "lawnmower", "parallel")
INPAINT_MODES = ("conditional", "unconditional")

Region = tuple[int, int, int, int]  # (row0, col0, height, width)


@dataclass(frozen=True)
class StitchGeometry:
    """Grid dimensions and pixel layout shared by all patterns."""

    rows: int
    cols: int
    patch: int
    gap: int
    margin: int = 8  # known-context width offered to inpaint tasks

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"grid dims must be >= 1x1, got {self.rows}x{self.cols}")
        if self.patch < 2:
            raise DomainError(f"patch size must be >= 2, got {self.patch}")
        if self.gap < 0:
            raise DomainError(f"gap must be >= 0, got {self.gap}")
        if self.margin < 1:
            raise DomainError(f"margin must be >= 1, got {self.margin}")

    @property
    def pitch(self) -> int:
        return self.patch + self.gap

    @property
    def map_height(self) -> int:
        return self.rows * self.patch + (self.rows - 1) * self.gap

    @property
    def map_width(self) -> int:
        return self.cols * self.patch + (self.cols - 1) * self.gap

    def vertex_region(self, i: int, j: int) -> Region:
        return (i * self.pitch, j * self.pitch, self.patch, self.patch)

    def h_gap_region(self, i: int, j: int) -> Region:
        """Gap strip between vertex (i, j) and (i, j+1)."""
        return (i * self.pitch, j * self.pitch + self.patch, self.patch, self.gap)

    def v_gap_region(self, i: int, j: int) -> Region:
        """Gap strip between vertex (i, j) and (i+1, j)."""
        return (i * self.pitch + self.patch, j * self.pitch, self.gap, self.patch)

    def center_region(self, i: int, j: int) -> Region:
        """Square hole between the four vertices with top-left (i, j)."""
        return (i * self.pitch + self.patch, j * self.pitch + self.patch, self.gap, self.gap)


@dataclass
class StitchTask:
    task_id: str
    kind: str                  # vertex | h_gap | v_gap | center_gap
    coords: tuple[int, int]
    depends_on: list[str]
    seed: int
    latent: np.ndarray
    op: str                    # generate | inpaint
    territory: list[Region]    # regions this task (and only this task) writes
    content_anchor: tuple[int, int]  # map coords of the content-frame origin


@dataclass
class StitchPlan:
    pattern: str
    geometry: StitchGeometry
    global_seed: int
    tasks: list[StitchTask]
    stages: list[list[str]]
    field_extent: float = 1.0

    def task_map(self) -> dict[str, StitchTask]:
        return {t.task_id: t for t in self.tasks}

    def critical_path(self) -> int:
        """Dependency depth of the plan, counted in execution stages."""
        return len(self.stages)

    def vertex_tasks(self) -> list[StitchTask]:
        return [t for t in self.tasks if t.kind == "vertex"]


def task_seed(global_seed: int, kind: str, i: int, j: int) -> int:
    """Per-task seed; depends on kind and coords only, never on pattern."""
    return derive_seed(global_seed, KIND_CODES[kind], i, j)


def _region_center(region: Region) -> tuple[float, float]:
    r0, c0, h, w = region
    return (r0 + (h - 1) / 2.0, c0 + (w - 1) / 2.0)


def _latent_at_pixel(latent_field: LatentField, geometry: StitchGeometry,
                     r: float, c: float) -> np.ndarray:
    """Latent for a map pixel: the field spans the whole map raster."""
    x = c / max(geometry.map_width - 1, 1) * latent_field.extent
    y = r / max(geometry.map_height - 1, 1) * latent_field.extent
    return sample_latent(latent_field, x, y)


def _vertex_latent(latent_field, geometry, i, j) -> np.ndarray:
    return _latent_at_pixel(latent_field, geometry,
                            *_region_center(geometry.vertex_region(i, j)))


def plan_parallel(latent_field: LatentField, geometry: StitchGeometry,
                  global_seed: int) -> StitchPlan:
    """Constant-depth plan: vertices, then h-gaps, v-gaps, centers."""
    tasks: list[StitchTask] = []
    stages: list[list[str]] = []

    vertex_ids = {}
    stage = []
    for i in range(geometry.rows):
        for j in range(geometry.cols):
            tid = f"vertex_{i}_{j}"
            vertex_ids[(i, j)] = tid
            tasks.append(StitchTask(
                task_id=tid, kind="vertex", coords=(i, j), depends_on=[],
                seed=task_seed(global_seed, "vertex", i, j),
                latent=_vertex_latent(latent_field, geometry, i, j),
                op="generate", territory=[geometry.vertex_region(i, j)],
                content_anchor=geometry.vertex_region(i, j)[:2]))
            stage.append(tid)
    stages.append(stage)

    if geometry.gap > 0:
        def add_gap_stage(kind, coords_list, region_fn, deps_fn):
            stage = []
            for i, j in coords_list:
                tid = f"{kind}_{i}_{j}"
                region = region_fn(i, j)
                tasks.append(StitchTask(
                    task_id=tid, kind=kind, coords=(i, j), depends_on=deps_fn(i, j),
                    seed=task_seed(global_seed, kind, i, j),
                    latent=_latent_at_pixel(latent_field, geometry, *_region_center(region)),
                    op="inpaint", territory=[region], content_anchor=region[:2]))
                stage.append(tid)
            if stage:
                stages.append(stage)

        add_gap_stage(
            "h_gap",
            [(i, j) for i in range(geometry.rows) for j in range(geometry.cols - 1)],
            geometry.h_gap_region,
            lambda i, j: [vertex_ids[(i, j)], vertex_ids[(i, j + 1)]])
        add_gap_stage(
            "v_gap",
            [(i, j) for i in range(geometry.rows - 1) for j in range(geometry.cols)],
            geometry.v_gap_region,
            lambda i, j: [vertex_ids[(i, j)], vertex_ids[(i + 1, j)]])
        add_gap_stage(
            "center_gap",
            [(i, j) for i in range(geometry.rows - 1) for j in range(geometry.cols - 1)],
            geometry.center_region,
            lambda i, j: [f"h_gap_{i}_{j}", f"h_gap_{i + 1}_{j}",
                          f"v_gap_{i}_{j}", f"v_gap_{i}_{j + 1}"])

    return StitchPlan(pattern="parallel", geometry=geometry, global_seed=global_seed,
                      tasks=tasks, stages=stages, field_extent=latent_field.extent)


def _sequential_order(rows: int, cols: int, lawnmower: bool) -> list[tuple[int, int]]:
    order = []
    for i in range(rows):
        js = range(cols)
        if lawnmower and i % 2 == 1:
            js = range(cols - 1, -1, -1)
        order.extend((i, j) for j in js)
    return order


def _plan_sequential(latent_field: LatentField, geometry: StitchGeometry,
                     global_seed: int, pattern: str) -> StitchPlan:
    """One composite tile task per cell, in raster or lawnmower order.

    A tile owns its vertex patch plus the gap strips (and corner square)
    back toward tiles placed before it, so the map is partitioned exactly
    once regardless of traversal direction.
    """
    order = _sequential_order(geometry.rows, geometry.cols,
                              lawnmower=(pattern == "lawnmower"))
    placed: set[tuple[int, int]] = set()
    tasks = []
    stages = []
    prev_id: str | None = None
    for idx, (i, j) in enumerate(order):
        tid = f"vertex_{i}_{j}"
        territory = [geometry.vertex_region(i, j)]
        if geometry.gap > 0:
            for dj in (-1, 1):
                if (i, j + dj) in placed:
                    jc = min(j, j + dj)
                    territory.append(geometry.h_gap_region(i, jc))
                    if i > 0:
                        territory.append(geometry.center_region(i - 1, jc))
            if i > 0:
                territory.append(geometry.v_gap_region(i - 1, j))
        deps = [f"vertex_{a}_{b}"
                for a, b in ((i, j - 1), (i, j + 1), (i - 1, j - 1), (i - 1, j), (i - 1, j + 1))
                if (a, b) in placed]
        if prev_id is not None and prev_id not in deps:
            deps.append(prev_id)
        tasks.append(StitchTask(
            task_id=tid, kind="vertex", coords=(i, j), depends_on=deps,
            seed=task_seed(global_seed, "vertex", i, j),
            latent=_vertex_latent(latent_field, geometry, i, j),
            op="generate" if idx == 0 else "inpaint",
            territory=territory,
            content_anchor=geometry.vertex_region(i, j)[:2]))
        stages.append([tid])
        placed.add((i, j))
        prev_id = tid
    return StitchPlan(pattern=pattern, geometry=geometry, global_seed=global_seed,
                      tasks=tasks, stages=stages, field_extent=latent_field.extent)


def plan_raster(latent_field: LatentField, geometry: StitchGeometry,
                global_seed: int) -> StitchPlan:
    """Row-by-row, single-direction total order."""
    return _plan_sequential(latent_field, geometry, global_seed, "raster")


def plan_lawnmower(latent_field: LatentField, geometry: StitchGeometry,
                   global_seed: int) -> StitchPlan:
    """Row-by-row in alternating direction."""
    return _plan_sequential(latent_field, geometry, global_seed, "lawnmower")


def build_plan(pattern: str, latent_field: LatentField, geometry: StitchGeometry,
               global_seed: int) -> StitchPlan:
    if pattern not in PATTERNS:
        raise DomainError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    builder = {"raster": plan_raster, "lawnmower": plan_lawnmower,
               "parallel": plan_parallel}[pattern]
    return builder(latent_field, geometry, global_seed)


def topological_order(plan: StitchPlan) -> list[str]:
    """Kahn's algorithm; raises PlanError on cycles or dangling deps."""
    by_id = plan.task_map()
    if len(by_id) != len(plan.tasks):
        raise PlanError("duplicate task ids in plan")
    indegree = {tid: 0 for tid in by_id}
    dependents: dict[str, list[str]] = {tid: [] for tid in by_id}
    for t in plan.tasks:
        for dep in t.depends_on:
            if dep not in by_id:
                raise PlanError(f"task {t.task_id} depends on unknown task {dep}")
            indegree[t.task_id] += 1
            dependents[dep].append(t.task_id)
    ready = [tid for tid, deg in indegree.items() if deg == 0]
    out = []
    while ready:
        tid = ready.pop()
        out.append(tid)
        for nxt in dependents[tid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)
    if len(out) != len(by_id):
        raise PlanError("plan dependency graph contains a cycle")
    return out


# --- execution ---------------------------------------------------------------

@dataclass
class TerrainMap:
    """Fused global RGBD raster plus seam bookkeeping."""

    rgb: np.ndarray      # (H, W, 3) float64 in [0, 1]
    depth: np.ndarray    # (H, W) float64 in [0, 1]
    owner: np.ndarray    # (H, W) int32 index into plan.tasks
    plan: StitchPlan
    seams: np.ndarray = field(default=None)  # (N, 4) int32 [ra, ca, rb, cb]

    def __post_init__(self):
        if self.seams is None:
            self.seams = seam_pairs(self.owner)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def vertex_tile(self, i: int, j: int) -> RgbdPatch:
        r0, c0, h, w = self.plan.geometry.vertex_region(i, j)
        return RgbdPatch(rgb=self.rgb[r0:r0 + h, c0:c0 + w].copy(),
                         depth=self.depth[r0:r0 + h, c0:c0 + w].copy())


def seam_pairs(owner: np.ndarray) -> np.ndarray:
    """Adjacent pixel pairs with different owners: horizontal then vertical
    adjacencies, row-major; the registry covers every inter-task boundary."""
    pairs = []
    diff_h = owner[:, :-1] != owner[:, 1:]
    r, c = np.nonzero(diff_h)
    pairs.append(np.stack([r, c, r, c + 1], axis=1))
    diff_v = owner[:-1, :] != owner[1:, :]
    r, c = np.nonzero(diff_v)
    pairs.append(np.stack([r, c, r + 1, c], axis=1))
    return np.concatenate(pairs, axis=0).astype(np.int32)


def static_ownership(plan: StitchPlan) -> np.ndarray:
    """Per-pixel owning task index; validates exactly-once coverage."""
    geo = plan.geometry
    owner = np.full((geo.map_height, geo.map_width), -1, dtype=np.int32)
    for idx, task in enumerate(plan.tasks):
        for r0, c0, h, w in task.territory:
            block = owner[r0:r0 + h, c0:c0 + w]
            if block.size != h * w:
                raise PlanError(f"task {task.task_id} territory exceeds the map")
            if np.any(block != -1):
                raise PlanError(f"task {task.task_id} territory overlaps another task")
            block[:] = idx
    if np.any(owner == -1):
        raise PlanError("plan territories do not cover the map")
    return owner


def _bounding_box(regions: list[Region], margin: int,
                  map_h: int, map_w: int) -> Region:
    r0 = min(r for r, _, _, _ in regions)
    c0 = min(c for _, c, _, _ in regions)
    r1 = max(r + h for r, _, h, _ in regions)
    c1 = max(c + w for _, c, _, w in regions)
    r0 = max(r0 - margin, 0)
    c0 = max(c0 - margin, 0)
    r1 = min(r1 + margin, map_h)
    c1 = min(c1 + margin, map_w)
    return (r0, c0, r1 - r0, c1 - c0)


def execute_plan(plan: StitchPlan, generator: ConditionalGenerator,
                 inpaint_mode: str = "unconditional", workers: int = 1) -> TerrainMap:
    """Run all tasks respecting dependencies; bit-identical for any worker
    count (per-task seeds, plan-determined masks, exclusive pixel ownership).
    """
    if inpaint_mode not in INPAINT_MODES:
        raise DomainError(f"inpaint_mode must be one of {INPAINT_MODES}, got {inpaint_mode!r}")
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers}")
    if generator.patch_size != plan.geometry.patch:
        raise DomainError(f"generator patch size {generator.patch_size} does not match "
                          f"plan patch size {plan.geometry.patch}")
    topological_order(plan)  # raises on cycles before any work starts
    geo = plan.geometry
    owner = static_ownership(plan)
    rgb = np.zeros((geo.map_height, geo.map_width, 3))
    depth = np.zeros((geo.map_height, geo.map_width))
    by_id = plan.task_map()
    index_of = {t.task_id: idx for idx, t in enumerate(plan.tasks)}

    def run_task(task: StitchTask) -> None:
        try:
            if task.op == "generate":
                patch = generator.generate(task.latent, task.seed)
                r0, c0, h, w = task.territory[0]
                if (h, w) != (patch.height, patch.width):
                    raise DomainError(f"generate output {patch.height}x{patch.width} does "
                                      f"not match territory {h}x{w}")
                rgb[r0:r0 + h, c0:c0 + w] = patch.rgb
                depth[r0:r0 + h, c0:c0 + w] = patch.depth
                return
            br, bc, bh, bw = _bounding_box(task.territory, geo.margin,
                                           geo.map_height, geo.map_width)
            dep_indices = np.array([index_of[d] for d in task.depends_on], dtype=np.int32)
            window_owner = owner[br:br + bh, bc:bc + bw]
            known = np.isin(window_owner, dep_indices)
            canvas = RgbdPatch(
                rgb=np.where(known[:, :, None], rgb[br:br + bh, bc:bc + bw], 0.5),
                depth=np.where(known, depth[br:br + bh, bc:bc + bw], 0.5))
            latent = task.latent if inpaint_mode == "conditional" else None
            origin = (br - task.content_anchor[0], bc - task.content_anchor[1])
            out = generator.inpaint(canvas, known, task.seed,
                                    latent=latent, content_origin=origin)
            for r0, c0, h, w in task.territory:
                rgb[r0:r0 + h, c0:c0 + w] = out.rgb[r0 - br:r0 - br + h, c0 - bc:c0 - bc + w]
                depth[r0:r0 + h, c0:c0 + w] = out.depth[r0 - br:r0 - br + h, c0 - bc:c0 - bc + w]
        except Exception as exc:
            raise RuntimeError(f"task {task.task_id} failed: {exc}") from exc

    if workers == 1:
        for stage in plan.stages:
            for tid in stage:
                run_task(by_id[tid])
    else:
        _run_dag(plan, run_task, workers)

    return TerrainMap(rgb=rgb, depth=depth, owner=owner, plan=plan)


def _run_dag(plan: StitchPlan, run_task, workers: int) -> None:
    by_id = plan.task_map()
    indegree = {t.task_id: len(t.depends_on) for t in plan.tasks}
    dependents: dict[str, list[str]] = {tid: [] for tid in by_id}
    for t in plan.tasks:
        for dep in t.depends_on:
            dependents[dep].append(t.task_id)
    lock = threading.Lock()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {}
        for tid, deg in indegree.items():
            if deg == 0:
                pending[pool.submit(run_task, by_id[tid])] = tid
        while pending:
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                tid = pending.pop(fut)
                fut.result()  # propagate task failures with task context
                with lock:
                    newly_ready = []
                    for nxt in dependents[tid]:
                        indegree[nxt] -= 1
                        if indegree[nxt] == 0:
                            newly_ready.append(nxt)
                for nxt in newly_ready:
                    pending[pool.submit(run_task, by_id[nxt])] = nxt


# --- serialization -----------------------------------------------------------

PLAN_FORMAT = "fractalsea-plan/1"


def plan_to_dict(plan: StitchPlan) -> dict:
    geo = plan.geometry
    return {
        "format": PLAN_FORMAT,
        "pattern": plan.pattern,
        "global_seed": plan.global_seed,
        "field_extent": plan.field_extent,
        "geometry": {"rows": geo.rows, "cols": geo.cols, "patch": geo.patch,
                     "gap": geo.gap, "margin": geo.margin},
        "stages": plan.stages,
        "tasks": [{
            "task_id": t.task_id,
            "kind": t.kind,
            "coords": list(t.coords),
            "depends_on": t.depends_on,
            "seed": t.seed,
            "latent": [float(v) for v in t.latent],
            "op": t.op,
            "territory": [list(r) for r in t.territory],
            "content_anchor": list(t.content_anchor),
        } for t in plan.tasks],
    }


def plan_from_dict(data: dict) -> StitchPlan:
    if data.get("format") != PLAN_FORMAT:
        raise ValidationError(f"unsupported plan format {data.get('format')!r}")
    geo = StitchGeometry(**data["geometry"])
    tasks = [StitchTask(
        task_id=t["task_id"], kind=t["kind"], coords=tuple(t["coords"]),
        depends_on=list(t["depends_on"]), seed=int(t["seed"]),
        latent=np.array(t["latent"], dtype=np.float64), op=t["op"],
        territory=[tuple(r) for r in t["territory"]],
        content_anchor=tuple(t["content_anchor"]),
    ) for t in data["tasks"]]
    return StitchPlan(pattern=data["pattern"], geometry=geo,
                      global_seed=int(data["global_seed"]), tasks=tasks,
                      stages=[list(s) for s in data["stages"]],
                      field_extent=float(data.get("field_extent", 1.0)))


def save_plan(plan: StitchPlan, path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_plan(path) -> StitchPlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_terrain_map(tmap: TerrainMap, out_dir) -> None:
    """Write the map directory: viewable PNGs, lossless arrays, seam CSV,
    and the plan JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rgb8 = np.floor(tmap.rgb * 255 + 0.5).astype(np.uint8)
    depth16 = np.floor(tmap.depth * 65535 + 0.5).astype(np.uint16)
    Image.fromarray(rgb8).save(out / "map_rgb.png")
    Image.fromarray(depth16).save(out / "map_depth.png")
    np.save(out / "map_rgb.npy", tmap.rgb)
    np.save(out / "map_depth.npy", tmap.depth)
    np.save(out / "owners.npy", tmap.owner)
    lines = ["owner_a,owner_b,r_a,c_a,r_b,c_b"]
    for ra, ca, rb, cb in tmap.seams:
        lines.append(f"{tmap.owner[ra, ca]},{tmap.owner[rb, cb]},{ra},{ca},{rb},{cb}")
    (out / "seams.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_plan(tmap.plan, out / "plan.json")


def load_terrain_map(map_dir) -> TerrainMap:
    src = Path(map_dir)
    plan = load_plan(src / "plan.json")
    rgb = np.load(src / "map_rgb.npy")
    depth = np.load(src / "map_depth.npy")
    owner = np.load(src / "owners.npy")
    return TerrainMap(rgb=rgb, depth=depth, owner=owner, plan=plan)
