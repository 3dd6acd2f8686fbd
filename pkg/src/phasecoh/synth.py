"""Desk-scale surrogate sensor data: coupled oscillators with stable
per-channel lags, plus attack injection.

Channels are weighted sums of shared sinusoidal oscillators, each tapped
at a channel-specific lag, plus independent Gaussian noise. Physically
coupled channels therefore hold a fixed relative phase at every driven
frequency, which is exactly the structure the coherence index measures.

Three attack kinds are injected by rewriting one channel on an interval:

    replay             copy the channel's own past values forward
    delay              shift the channel by d samples
    stealth_gain_phase  rotate the segment's spectral phase and rescale

All three leave amplitude statistics plausible while disturbing the
cross-channel phase relationships.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import TimeSeriesFrame

ATTACK_KINDS = ("replay", "delay", "stealth_gain_phase")


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    """Generator layout: oscillators, per-channel couplings, noise.

    coupling maps channel index to a list of (oscillator index, lag in
    samples, gain) taps. Frequencies are in cycles per sample.
    """

    channels: int
    length: int
    base_freqs: list
    coupling: dict
    noise_std: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.channels < 1 or self.length < 1:
            raise SynthError("channels and length must be positive")
        for f in self.base_freqs:
            if not 0.0 < f < 0.5:
                raise SynthError(f"frequency {f} outside (0, 0.5) cycles/sample")
        if self.noise_std < 0:
            raise SynthError(f"noise_std must be >= 0, got {self.noise_std}")
        for ch, taps in self.coupling.items():
            if not 0 <= ch < self.channels:
                raise SynthError(f"coupling references channel {ch}")
            for osc, lag, _gain in taps:
                if not 0 <= osc < len(self.base_freqs):
                    raise SynthError(f"channel {ch} references oscillator {osc}")
                if lag < 0:
                    raise SynthError(f"channel {ch} has negative lag {lag}")

    def to_dict(self) -> dict:
        return {"channels": self.channels, "length": self.length,
                "base_freqs": list(self.base_freqs),
                "coupling": {str(ch): [list(tap) for tap in taps]
                             for ch, taps in self.coupling.items()},
                "noise_std": self.noise_std, "seed": self.seed}


@dataclass
class AttackSpec:
    """One attack: overwrite ``target`` on [start, stop) per ``kind``.

    params per kind:
      replay             {"source_offset": int}  copy from [start-off, stop-off)
      delay              {"delay": int}          x(t) := x(t - delay)
      stealth_gain_phase {"gain": float, "phase_shift": float}
    """

    kind: str
    target: int
    start: int
    stop: int
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "start": self.start,
                "stop": self.stop, "params": dict(self.params)}


def generate(cfg: SynthConfig) -> TimeSeriesFrame:
    """Deterministic (seeded) clean frame; all labels are 0.

    channel_c(t) = sum over taps of gain * sin(2*pi*f*(t - lag) + phi)
                   + N(0, noise_std^2)

    Oscillator phases phi are drawn once per oscillator, so two channels
    tapping the same oscillator differ only by the lag-induced phase.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(cfg.base_freqs))
    noise = rng.normal(0.0, cfg.noise_std, size=(cfg.length, cfg.channels))
    t = np.arange(cfg.length)
    values = np.zeros((cfg.length, cfg.channels))
    for ch in range(cfg.channels):
        acc = np.zeros(cfg.length)
        for osc, lag, gain in cfg.coupling.get(ch, ()):
            f = cfg.base_freqs[osc]
            acc += gain * np.sin(2.0 * np.pi * f * (t - lag) + phases[osc])
        values[:, ch] = acc
    values += noise
    return TimeSeriesFrame(values=values,
                           labels=np.zeros(cfg.length, dtype=np.int64),
                           channel_names=[f"ch{c:02d}" for c in range(cfg.channels)],
                           timestamps=t)


def inject(frame: TimeSeriesFrame, spec: AttackSpec) -> TimeSeriesFrame:
    """Return a copy of the frame with one attack applied.

    Only the target channel inside [start, stop) is touched; labels on
    the interval are OR-ed to 1. A zero-length interval is a no-op.
    """
    if spec.kind not in ATTACK_KINDS:
        raise SynthError(f"unknown attack kind {spec.kind!r}")
    if not 0 <= spec.target < frame.n_channels:
        raise SynthError(f"target channel {spec.target} out of range")
    if not 0 <= spec.start <= spec.stop <= frame.n_rows:
        raise SynthError(
            f"interval [{spec.start}, {spec.stop}) outside frame of "
            f"{frame.n_rows} rows")
    values = frame.values.copy()
    labels = frame.labels.copy()
    if spec.stop == spec.start:
        return TimeSeriesFrame(values, labels, frame.channel_names,
                               frame.timestamps.copy())
    t0, t1, tgt = spec.start, spec.stop, spec.target

    if spec.kind == "replay":
        off = int(spec.params["source_offset"])
        if off < t1 - t0:
            raise SynthError(
                f"replay source [{t0 - off}, {t1 - off}) overlaps the target "
                f"interval; need source_offset >= {t1 - t0}")
        if t0 - off < 0:
            raise SynthError(
                f"replay source start {t0 - off} before the frame begins")
        values[t0:t1, tgt] = frame.values[t0 - off:t1 - off, tgt]
    elif spec.kind == "delay":
        d = int(spec.params["delay"])
        if d < 0:
            raise SynthError(f"delay must be >= 0, got {d}")
        if t0 - d < 0:
            raise SynthError(f"delay {d} reads before the frame begins")
        values[t0:t1, tgt] = frame.values[t0 - d:t1 - d, tgt]
    else:  # stealth_gain_phase
        gain = float(spec.params.get("gain", 1.0))
        shift = float(spec.params.get("phase_shift", 0.0))
        seg = frame.values[t0:t1, tgt]
        spec_seg = np.fft.rfft(seg)
        rot = np.exp(1j * shift)
        # bin 0 (and the Nyquist bin for even lengths) stay real
        last = spec_seg.size - 1 if seg.size % 2 == 0 else spec_seg.size
        spec_seg[1:last] *= rot
        values[t0:t1, tgt] = gain * np.fft.irfft(spec_seg, n=seg.size)

    labels[t0:t1] = 1
    return TimeSeriesFrame(values, labels, frame.channel_names,
                           frame.timestamps.copy())


def write_csv(frame: TimeSeriesFrame, path) -> None:
    """Write a frame in the CSV format the ingest loader reads."""
    header = ["timestamp"] + list(frame.channel_names) + ["label"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in range(frame.n_rows):
            cells = [str(int(frame.timestamps[r]))]
            cells += [repr(float(v)) for v in frame.values[r]]
            cells.append(str(int(frame.labels[r])))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# canonical seeded scenario
# ---------------------------------------------------------------------------

# Eight channels in two independent groups of four. Each group taps nine
# shared oscillators on the f = k/20 grid plus one slow drift component.
# Channel lags are multiples of 20 samples, so within a group every
# oscillator contributes an integer number of cycles of relative lag and
# the pairwise phase differences sit at zero across the band: clean
# coherence is high by construction. The attacks below break that grid.
CANONICAL_SEED = 20260
CANONICAL_WINDOW = 60
CANONICAL_NORMAL_ROWS = 20_000
CANONICAL_ATTACK_ROWS = 4_800
# replay offset 613 and delay 7 are deliberately off the 20-sample lag
# grid, so every oscillator's relative phase disperses on the attacked
# windows.
CANONICAL_ATTACKS = (
    AttackSpec("replay", target=2, start=1200, stop=1800,
               params={"source_offset": 613}),
    AttackSpec("delay", target=6, start=3600, stop=4200,
               params={"delay": 7}),
)
# coupled partner used for the coherence-drop regression checks
CANONICAL_PARTNERS = {2: 0, 6: 4}


def canonical_config(seed: int = CANONICAL_SEED) -> SynthConfig:
    """The canonical 8-channel generator layout."""
    group_freqs = [k / 20.0 for k in range(1, 10)]
    base_freqs = group_freqs + [0.004] + group_freqs + [0.004]
    lags = [0, 20, 40, 60]
    rng = np.random.default_rng(seed + 1)  # gains only; signal uses cfg.seed
    coupling = {}
    for ch in range(8):
        group = ch // 4
        osc0 = group * 10
        lag = lags[ch % 4]
        taps = [(osc0 + k, lag, float(g))
                for k, g in enumerate(rng.uniform(0.7, 1.3, size=9))]
        taps.append((osc0 + 9, 0, 0.4))  # shared drift, no lag
        coupling[ch] = taps
    return SynthConfig(channels=8,
                       length=CANONICAL_NORMAL_ROWS + CANONICAL_ATTACK_ROWS,
                       base_freqs=base_freqs, coupling=coupling,
                       noise_std=0.05, seed=seed)


def canonical_scenario(seed: int = CANONICAL_SEED):
    """Generate the canonical fixture: a clean normal frame and a later
    segment of the same process with one replay and one delay attack.

    Returns (normal_frame, attack_frame, attack_specs). The attack frame
    is a continuation of the normal frame (same oscillator phases), so
    its clean windows are statistically identical to training data.
    """
    cfg = canonical_config(seed)
    full = generate(cfg)
    normal = full.slice_rows(0, CANONICAL_NORMAL_ROWS)
    attacked = full.slice_rows(CANONICAL_NORMAL_ROWS, cfg.length)
    for spec in CANONICAL_ATTACKS:
        attacked = inject(attacked, spec)
    return normal, attacked, list(CANONICAL_ATTACKS)
