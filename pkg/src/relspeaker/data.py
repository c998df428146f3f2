"""Dataset manifests and the synthetic speaker corpus.

Synthetic voices are harmonic excitations with a per-speaker fundamental,
spectral tilt, and formant-like resonance peaks, plus a noise floor.
Inter-speaker parameter spread is larger than intra-speaker clip jitter
by construction, so mel features separate the speakers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .features import WaveformClip

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = "clip_id\tpath\tspeaker_id\tsplit"


class ManifestError(ValueError):
    """Manifest validation failure; .problems lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid manifest:\n" + "\n".join("  - %s" % p for p in self.problems))


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    speaker_id: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        problems = []
        seen = set()
        for e in self.entries:
            if e.clip_id in seen:
                problems.append("duplicate clip_id %r" % e.clip_id)
            seen.add(e.clip_id)
            if e.split not in SPLITS:
                problems.append("clip %r: unknown split %r" % (e.clip_id, e.split))
        if not self.entries:
            problems.append("manifest is empty")
        if problems:
            raise ManifestError(problems)

    @property
    def speakers(self) -> list[int]:
        return sorted({e.speaker_id for e in self.entries})

    def speaker_index(self) -> dict[int, int]:
        """speaker_id -> contiguous global index in {1..N'} (train split only)."""
        train = sorted({e.speaker_id for e in self.entries if e.split == "train"})
        return {s: i + 1 for i, s in enumerate(train)}

    def clips_by_speaker(self, split: str | None = None) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for e in self.entries:
            if split is None or e.split == split:
                out.setdefault(e.speaker_id, []).append(e.clip_id)
        return out

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def path_of(self, clip_id: str) -> str:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e.path
        raise KeyError(clip_id)

    def check_unseen_protocol(self):
        """Reject speakers whose clips straddle train and test splits."""
        train = {e.speaker_id for e in self.entries if e.split == "train"}
        test = {e.speaker_id for e in self.entries if e.split == "test"}
        shared = sorted(train & test)
        if shared:
            raise ManifestError(
                ["speaker %d has clips in both train and test; the unseen-speaker "
                 "protocol requires disjoint speakers" % s for s in shared])


def save_manifest(manifest: DatasetManifest, path):
    with open(path, "w") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for e in manifest.entries:
            fh.write("%s\t%s\t%d\t%s\n" % (e.clip_id, e.path, e.speaker_id, e.split))


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    problems = []
    entries = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != MANIFEST_HEADER:
            raise ManifestError(["bad header %r, expected %r" % (header, MANIFEST_HEADER)])
        for line_no, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                problems.append("line %d: expected 4 tab-separated fields" % line_no)
                continue
            entries.append(ManifestEntry(parts[0], parts[1], int(parts[2]), parts[3]))
    if problems:
        raise ManifestError(problems)
    manifest = DatasetManifest(entries)
    if check_files:
        missing = [e.path for e in entries if not (path.parent / e.path).is_file()
                   and not Path(e.path).is_file()]
        if missing:
            raise ManifestError(["missing audio file %s" % p for p in missing])
    return manifest


def load_clip(manifest: DatasetManifest, clip_id: str, base_dir=None) -> WaveformClip:
    p = Path(manifest.path_of(clip_id))
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    rate, samples = scipy.io.wavfile.read(p)
    if samples.ndim != 1:
        raise ValueError("clip %r: expected single-channel audio" % clip_id)
    if samples.dtype.kind == "i":
        samples = samples / float(np.iinfo(samples.dtype).max)
    speaker = next(e.speaker_id for e in manifest.entries if e.clip_id == clip_id)
    return WaveformClip(samples=samples, sample_rate=int(rate),
                        speaker_id=speaker, clip_id=clip_id)


@dataclass
class SyntheticSpeakerSpec:
    n_speakers: int = 10
    n_heldout: int = 0  # trailing speakers assigned to the test split
    clips_per_speaker: int = 20
    clip_seconds: float = 2.0
    sample_rate: int = 16000
    f0_min: float = 95.0
    f0_max: float = 320.0
    n_harmonics: int = 24
    noise_floor: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.clips_per_speaker < 1:
            raise ValueError("need at least one speaker and one clip per speaker")
        if not 0 <= self.n_heldout < self.n_speakers:
            raise ValueError("n_heldout must leave at least one training speaker")


def _speaker_voice(spec: SyntheticSpeakerSpec, index: int,
                   rng: np.random.Generator) -> dict:
    """Per-speaker voice parameters; F0s are log-spaced so voices never collide."""
    log_f0 = np.linspace(np.log(spec.f0_min), np.log(spec.f0_max), spec.n_speakers)
    return {
        "f0": float(np.exp(log_f0[index])),
        "tilt": float(rng.uniform(0.5, 1.5)),  # harmonic amplitude ~ 1/h**tilt
        "formants": [float(f) for f in rng.uniform(300.0, 3500.0, size=3)],
        "formant_bw": float(rng.uniform(150.0, 350.0)),
        "formant_gain": float(rng.uniform(2.0, 5.0)),
    }


def _render_clip(voice: dict, spec: SyntheticSpeakerSpec,
                 rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.clip_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    f0 = voice["f0"] * rng.uniform(0.97, 1.03)  # intra-speaker jitter
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t)
    phase_inc = 2 * np.pi * f0 * vibrato / spec.sample_rate
    phase = np.cumsum(phase_inc)
    signal = np.zeros(n)
    nyquist = spec.sample_rate / 2.0
    formants = np.asarray(voice["formants"])
    for h in range(1, spec.n_harmonics + 1):
        fh = h * f0
        if fh >= nyquist:
            break
        amp = 1.0 / h ** voice["tilt"]
        resonance = np.exp(-((fh - formants) / voice["formant_bw"]) ** 2).sum()
        amp *= 1.0 + voice["formant_gain"] * resonance
        signal += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t
                                  + rng.uniform(0, 2 * np.pi))
    signal = signal * envelope + spec.noise_floor * rng.standard_normal(n)
    return 0.9 * signal / np.max(np.abs(signal))


def generate_synthetic_corpus(spec: SyntheticSpeakerSpec, out_dir) -> DatasetManifest:
    """Write WAV files, voice parameters, and a manifest under out_dir.

    Deterministic per seed: per-speaker and per-clip RNG streams are
    spawned from a single seed sequence, so the corpus is bit-identical
    across runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root_seq = np.random.SeedSequence(spec.seed)
    speaker_seqs = root_seq.spawn(spec.n_speakers)
    entries = []
    voices = {}
    # spread held-out speakers across the F0 ladder so their voices lie
    # inside the training range rather than extrapolating past it
    heldout = set()
    if spec.n_heldout:
        heldout = {int(round(i)) for i in
                   np.linspace(1, spec.n_speakers - 2, spec.n_heldout)}
        for i in range(spec.n_speakers):  # rounding collisions on dense grids
            if len(heldout) == spec.n_heldout:
                break
            heldout.add(i)
    for s in range(spec.n_speakers):
        speaker_id = s + 1
        split = "test" if s in heldout else "train"
        voice_rng = np.random.default_rng(speaker_seqs[s])
        voices[speaker_id] = _speaker_voice(spec, s, voice_rng)
        clip_seqs = speaker_seqs[s].spawn(spec.clips_per_speaker)
        for c in range(spec.clips_per_speaker):
            clip_id = "spk%03d_clip%03d" % (speaker_id, c)
            rel_path = "%s.wav" % clip_id
            samples = _render_clip(voices[speaker_id], spec,
                                   np.random.default_rng(clip_seqs[c]))
            pcm = np.clip(samples * 32767.0, -32768, 32767).astype(np.int16)
            scipy.io.wavfile.write(out_dir / rel_path, spec.sample_rate, pcm)
            entries.append(ManifestEntry(clip_id, rel_path, speaker_id, split))
    with open(out_dir / "voices.json", "w") as fh:
        json.dump({"spec": spec.__dict__, "voices": voices}, fh, indent=2, sort_keys=True)
    manifest = DatasetManifest(entries)
    save_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
