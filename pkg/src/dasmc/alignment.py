"""DNA alignments, FASTA / relaxed PHYLIP I/O and site-pattern compression."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import STATES

_CODE = np.full(256, -1, dtype=np.int8)
for _i, _c in enumerate(STATES):
    _CODE[ord(_c)] = _i
    _CODE[ord(_c.lower())] = _i


class AlignmentError(ValueError):
    pass


def encode(seq: str, name: str = "") -> np.ndarray:
    raw = np.frombuffer(seq.encode("latin-1"), dtype=np.uint8)
    codes = _CODE[raw]
    bad = np.flatnonzero(codes < 0)
    if bad.size:
        ch = seq[bad[0]]
        raise AlignmentError(f"sequence {name!r}: unsupported character {ch!r} at column {bad[0] + 1}")
    return codes.astype(np.int8)


class Alignment:
    """Taxa plus an integer state matrix (rows = taxa, columns = sites)."""

    def __init__(self, taxa: Sequence[str], states):
        self.taxa = tuple(taxa)
        self.states = np.asarray(states, dtype=np.int8)
        if self.states.ndim != 2 or self.states.shape[0] != len(self.taxa):
            raise AlignmentError("state matrix must be n_taxa x n_sites")
        if self.states.shape[1] == 0:
            raise AlignmentError("alignment has no sites")
        if len(set(self.taxa)) != len(self.taxa):
            raise AlignmentError("duplicate taxon names")
        if self.states.min() < 0 or self.states.max() > 3:
            raise AlignmentError("states must be in 0..3")

    @property
    def n_taxa(self):
        return len(self.taxa)

    @property
    def n_sites(self):
        return self.states.shape[1]

    def sequences(self) -> dict[str, str]:
        lut = np.array(list(STATES))
        return {name: "".join(lut[row]) for name, row in zip(self.taxa, self.states)}

    def reorder(self, taxa: Sequence[str]) -> "Alignment":
        taxa = tuple(taxa)
        if taxa == self.taxa:
            return self
        if sorted(taxa) != sorted(self.taxa):
            raise AlignmentError("alignment taxa do not match the tree's taxa")
        pos = {n: i for i, n in enumerate(self.taxa)}
        return Alignment(taxa, self.states[[pos[n] for n in taxa]])

    def repeat(self, times: int) -> "Alignment":
        return Alignment(self.taxa, np.tile(self.states, (1, times)))

    @classmethod
    def from_sequences(cls, seqs: dict[str, str]) -> "Alignment":
        if not seqs:
            raise AlignmentError("empty alignment")
        lens = {len(s) for s in seqs.values()}
        if len(lens) != 1:
            raise AlignmentError("sequences have different lengths")
        return cls(list(seqs), np.stack([encode(s, n) for n, s in seqs.items()]))


@dataclass
class SitePatterns:
    """Distinct alignment columns with their multiplicities."""

    taxa: tuple
    patterns: np.ndarray  # n_taxa x n_patterns
    counts: np.ndarray

    @property
    def n_patterns(self):
        return self.patterns.shape[1]

    @property
    def n_sites(self):
        return int(self.counts.sum())


def compress_patterns(aln: Alignment) -> SitePatterns:
    if aln.n_sites == 0:
        raise AlignmentError("empty alignment")
    cols, counts = np.unique(aln.states.T, axis=0, return_counts=True)
    return SitePatterns(aln.taxa, np.ascontiguousarray(cols.T), counts.astype(float))


def identity_patterns(aln: Alignment) -> SitePatterns:
    """Uncompressed columns, one pattern per site."""
    return SitePatterns(aln.taxa, aln.states.copy(), np.ones(aln.n_sites))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_fasta(path) -> Alignment:
    seqs: dict[str, list[str]] = {}
    name = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                name = line[1:].split()[0] if line[1:].strip() else ""
                if not name:
                    raise AlignmentError(f"line {lineno}: empty FASTA header")
                if name in seqs:
                    raise AlignmentError(f"duplicate taxon {name!r}")
                seqs[name] = []
            elif name is None:
                raise AlignmentError(f"line {lineno}: sequence data before first header")
            else:
                seqs[name].append("".join(line.split()))
    return Alignment.from_sequences({k: "".join(v) for k, v in seqs.items()})


def read_phylip(path) -> Alignment:
    """Relaxed sequential or interleaved PHYLIP (names separated by whitespace)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise AlignmentError("empty PHYLIP file")
    try:
        n_taxa, n_sites = (int(x) for x in lines[0].split()[:2])
    except ValueError as exc:
        raise AlignmentError("PHYLIP header must give taxon and site counts") from exc
    names, chunks = [], []
    body = lines[1:]
    for ln in body[:n_taxa]:
        parts = ln.split(None, 1)
        if len(parts) < 2:
            raise AlignmentError(f"malformed PHYLIP line: {ln!r}")
        names.append(parts[0])
        chunks.append(["".join(parts[1].split())])
    if len(names) != n_taxa:
        raise AlignmentError(f"expected {n_taxa} taxa, found {len(names)}")
    for k, ln in enumerate(body[n_taxa:]):
        chunks[k % n_taxa].append("".join(ln.split()))
    seqs = {n: "".join(c) for n, c in zip(names, chunks)}
    if len(seqs) != n_taxa:
        raise AlignmentError("duplicate taxon names")
    for n, s in seqs.items():
        if len(s) != n_sites:
            raise AlignmentError(f"taxon {n!r} has {len(s)} sites, header says {n_sites}")
    return Alignment.from_sequences(seqs)


def read_alignment(path) -> Alignment:
    """Dispatch on content: '>' starts FASTA, otherwise PHYLIP."""
    with open(path) as fh:
        head = fh.read(1024).lstrip()
    if head.startswith(">"):
        return read_fasta(path)
    return read_phylip(path)


def write_fasta(aln: Alignment, path, width: int = 80) -> None:
    with open(path, "w") as fh:
        for name, s in aln.sequences().items():
            fh.write(f">{name}\n")
            for i in range(0, len(s), width):
                fh.write(s[i:i + width] + "\n")


def write_phylip(aln: Alignment, path) -> None:
    seqs = aln.sequences()
    pad = max(len(n) for n in seqs) + 2
    with open(path, "w") as fh:
        fh.write(f"{aln.n_taxa} {aln.n_sites}\n")
        for name, s in seqs.items():
            fh.write(f"{name.ljust(pad)}{s}\n")
