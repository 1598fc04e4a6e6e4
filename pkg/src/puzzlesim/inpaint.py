"""Progressive inpainting driven by the similarity map.

Each round thresholds the current map into candidate masks, inpaints every
candidate through a pluggable backend, and keeps the candidate with the
best mean-similarity gain net of a mask-area penalty. The loop stops when
no candidate improves (max delta <= 0) or the round limit is hit.
"""

import io
import json
import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import InpainterError
from .metric import puzzle_similarity
from .tensor import load_image, save_image

DEFAULT_N_CANDIDATES = 50
DEFAULT_ALPHA = 0.05
DEFAULT_LAMBDA = 0.05
DEFAULT_ROUND_LIMIT = 10


@dataclass(frozen=True)
class ThresholdSchedule:
    candidates: np.ndarray  # non-decreasing thresholds
    refined: bool = False   # True when sampled from a window around an accepted tau


@dataclass(frozen=True)
class CandidateScore:
    delta: float
    mask_area_fraction: float
    mean_sim_before: float
    mean_sim_after: float


@dataclass
class RoundRecord:
    round: int
    tau: float
    delta: float
    mask_fraction: float
    mean_sim: float
    accepted: bool

    def as_json(self):
        return json.dumps({
            "round": self.round, "tau": self.tau, "delta": self.delta,
            "mask_fraction": self.mask_fraction, "mean_sim": self.mean_sim,
            "accepted": self.accepted,
        })


def initial_schedule(sim_values, n_candidates=DEFAULT_N_CANDIDATES):
    """Thresholds uniformly spaced between min and mean of the map.

    Returns None when the map is constant (min == mean): converged.
    """
    lo = float(sim_values.min())
    mean = float(sim_values.mean())
    if mean <= lo:
        return None
    i = np.arange(n_candidates, dtype=np.float64)
    taus = lo + i / (n_candidates - 1) * (mean - lo) if n_candidates > 1 else np.array([lo])
    return ThresholdSchedule(candidates=taus, refined=False)


def refined_schedule(sim_values, prev_tau, alpha, n_candidates=DEFAULT_N_CANDIDATES):
    """Window of half-width alpha*(max-min) around the last accepted threshold.

    Falls back to the initial schedule when the window tops out below the
    map minimum (every mask would be empty).
    """
    lo = float(sim_values.min())
    hi = float(sim_values.max())
    half = alpha * (hi - lo)
    upper = prev_tau + half
    if upper < lo:
        return initial_schedule(sim_values, n_candidates)
    taus = np.linspace(prev_tau - half, upper, n_candidates)
    return ThresholdSchedule(candidates=taus, refined=True)


def make_masks(sim_values, schedule):
    """Binary masks M_i = (sim <= tau_i); areas are non-decreasing in i."""
    if schedule is None:
        return []
    return [(sim_values <= tau) for tau in schedule.candidates]


def score_candidate(before_values, after_values, mask, lam=DEFAULT_LAMBDA):
    """delta = mean(after) - mean(before) - lambda * (mask area fraction)."""
    if before_values.shape != after_values.shape or mask.shape != before_values.shape:
        raise ValueError("shape mismatch between maps and mask")
    area = float(mask.mean())
    if area == 0.0:
        raise ValueError("empty mask cannot be scored")
    before = float(before_values.mean())
    after = float(after_values.mean())
    return CandidateScore(
        delta=after - before - lam * area,
        mask_area_fraction=area,
        mean_sim_before=before,
        mean_sim_after=after,
    )


class InpainterClient:
    """Backend contract: same-shape output, unmasked pixels preserved."""

    name = "inpainter"

    def inpaint(self, image, mask):
        raise NotImplementedError

    def __call__(self, image, mask):
        if mask.shape != image.shape[:2]:
            raise InpainterError(self.name, f"mask shape {mask.shape} != image {image.shape[:2]}")
        out = self.inpaint(image, mask)
        if out.shape != image.shape:
            raise InpainterError(self.name, f"backend returned shape {out.shape}")
        # guarantee the contract outside the mask regardless of backend drift
        out = np.where(mask[:, :, None], out, image)
        return np.clip(out, 0.0, 1.0).astype(np.float32)


class IdentityInpainter(InpainterClient):
    name = "stub:identity"

    def inpaint(self, image, mask):
        return image.copy()


class MeanFillInpainter(InpainterClient):
    """Fills masked pixels with the per-channel mean of the unmasked region."""

    name = "stub:meanfill"

    def inpaint(self, image, mask):
        out = image.copy()
        keep = ~mask
        if keep.any():
            fill = image[keep].mean(axis=0)
        else:
            fill = np.full(3, 0.5, dtype=np.float32)
        out[mask] = fill
        return out


class SubprocessInpainter(InpainterClient):
    """Runs `<exe> --image in.png --mask mask.png --out out.png`."""

    def __init__(self, exe, timeout=300):
        self.exe = exe
        self.timeout = timeout
        self.name = f"exec:{exe}"

    def inpaint(self, image, mask):
        from PIL import Image

        with tempfile.TemporaryDirectory(prefix="pzsim-inpaint-") as tmp:
            img_path = os.path.join(tmp, "in.png")
            mask_path = os.path.join(tmp, "mask.png")
            out_path = os.path.join(tmp, "out.png")
            save_image(image, img_path)
            Image.fromarray(mask.astype(np.uint8) * 255).convert("1").save(mask_path)
            try:
                proc = subprocess.run(
                    [self.exe, "--image", img_path, "--mask", mask_path, "--out", out_path],
                    capture_output=True, timeout=self.timeout,
                )
            except (OSError, subprocess.TimeoutExpired) as e:
                raise InpainterError(self.name, str(e)) from e
            if proc.returncode != 0:
                raise InpainterError(
                    self.name,
                    f"exit {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}",
                )
            if not os.path.exists(out_path):
                raise InpainterError(self.name, "backend wrote no output file")
            return load_image(out_path)


class HTTPInpainter(InpainterClient):
    """POST /inpaint multipart: `image` (PNG) and `mask` (1-bit PNG, white=inpaint)."""

    def __init__(self, base_url, timeout=300):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.name = f"http:{self.base_url}"

    def inpaint(self, image, mask):
        import requests
        from PIL import Image

        img_buf = io.BytesIO()
        Image.fromarray((np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)).save(
            img_buf, format="PNG")
        mask_buf = io.BytesIO()
        Image.fromarray(mask.astype(np.uint8) * 255).convert("1").save(
            mask_buf, format="PNG")
        try:
            resp = requests.post(
                self.base_url + "/inpaint",
                files={
                    "image": ("image.png", img_buf.getvalue(), "image/png"),
                    "mask": ("mask.png", mask_buf.getvalue(), "image/png"),
                },
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise InpainterError(self.name, str(e)) from e
        if resp.status_code != 200:
            raise InpainterError(self.name, f"HTTP {resp.status_code}")
        from PIL import Image as PILImage

        arr = np.asarray(PILImage.open(io.BytesIO(resp.content)).convert("RGB"),
                         dtype=np.float32) / 255.0
        return arr


@dataclass
class InpaintConfig:
    n_candidates: int = DEFAULT_N_CANDIDATES
    alpha: float = DEFAULT_ALPHA
    lam: float = DEFAULT_LAMBDA
    round_limit: int = DEFAULT_ROUND_LIMIT
    tile_q: int = 256
    tile_r: int = 4096
    weights: tuple = None


@dataclass
class InpaintResult:
    image: np.ndarray
    trace: list = field(default_factory=list)
    rounds: int = 0
    accepted: int = 0
    converged: bool = True
    aborted: str = ""


def inpaint_iteratively(test, index, spec, archive, inpainter,
                        config=None):
    """Run the full accept-best-candidate loop until no candidate improves."""
    cfg = config or InpaintConfig()
    current = np.asarray(test, dtype=np.float32)
    sim = puzzle_similarity(current, index, spec, archive, weights=cfg.weights,
                            tile_q=cfg.tile_q, tile_r=cfg.tile_r)
    result = InpaintResult(image=current)
    prev_tau = None
    prev_accepted_mean = None

    for rnd in range(1, cfg.round_limit + 1):
        values = sim.values
        if prev_tau is None:
            schedule = initial_schedule(values, cfg.n_candidates)
        else:
            schedule = refined_schedule(values, prev_tau, cfg.alpha, cfg.n_candidates)
        if schedule is None:
            break
        masks = make_masks(values, schedule)

        best = None  # (score, tau, image, sim)
        try:
            for tau, mask in zip(schedule.candidates, masks):
                if not mask.any():
                    continue
                candidate = inpainter(current, mask)
                cand_sim = puzzle_similarity(candidate, index, spec, archive,
                                             weights=cfg.weights,
                                             tile_q=cfg.tile_q, tile_r=cfg.tile_r)
                score = score_candidate(values, cand_sim.values, mask, cfg.lam)
                if best is None or score.delta > best[0].delta:
                    best = (score, float(tau), candidate, cand_sim)
        except InpainterError as e:
            result.aborted = str(e)
            result.rounds = rnd
            return result

        if best is None:
            break
        score, tau, candidate, cand_sim = best
        result.rounds = rnd
        accepted = score.delta > 0.0
        result.trace.append(RoundRecord(
            round=rnd, tau=tau, delta=score.delta,
            mask_fraction=score.mask_area_fraction,
            mean_sim=score.mean_sim_after if accepted else score.mean_sim_before,
            accepted=accepted,
        ))
        if not accepted:
            break
        # monotonic improvement guarantee: accepted rounds never lower the mean
        if prev_accepted_mean is not None:
            assert score.mean_sim_after >= prev_accepted_mean - 1e-6, \
                "accepted round decreased mean similarity"
        prev_accepted_mean = score.mean_sim_after
        current, sim, prev_tau = candidate, cand_sim, tau
        result.image = current
        result.accepted += 1
    else:
        result.converged = False  # round limit exhausted

    return result


def write_trace(trace, path):
    with open(path, "w") as f:
        for record in trace:
            f.write(record.as_json() + "\n")
