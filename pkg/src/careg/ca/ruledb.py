"""Text-file store mapping shape class labels to (gene, MACA config, PEF signature).

One record per line, tab separated::

    label  gene-hex  depth:rule,rule,...  pos,pos,...  bits

``gene-hex`` is the big-endian float64 payload of the gene, the rule vector
is prefixed by the MACA depth, and ``bits`` is the PEF signature as a 0/1
string.  An empty position list is written as ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .cnn import Gene
from .maca import MACAConfig


class RuleDBError(ValueError):
    pass


@dataclass(frozen=True)
class RuleEntry:
    label: str
    gene: Gene
    cfg: MACAConfig
    signature: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "signature", tuple(int(b) for b in self.signature))
        if not self.label or any(c in self.label for c in "\t\n\r"):
            raise RuleDBError(f"invalid label {self.label!r}")
        if len(self.signature) != self.cfg.m:
            raise RuleDBError(f"signature length {len(self.signature)} != m={self.cfg.m}")
        if any(b not in (0, 1) for b in self.signature):
            raise RuleDBError("signature must be bits")

    def to_line(self) -> str:
        rules = ",".join(str(r) for r in self.cfg.rule_vector)
        pos = ",".join(str(p) for p in self.cfg.pef_positions) or "-"
        bits = "".join(str(b) for b in self.signature) or "-"
        return "\t".join([self.label, self.gene.to_hex(), f"{self.cfg.depth}:{rules}", pos, bits])

    @classmethod
    def from_line(cls, line: str) -> "RuleEntry":
        parts = line.split("\t")
        if len(parts) != 5:
            raise RuleDBError(f"expected 5 tab-separated fields, got {len(parts)}")
        label, ghex, rv, pos, bits = parts
        try:
            gene = Gene.from_hex(ghex)
        except ValueError as e:
            raise RuleDBError(f"bad gene payload: {e}") from None
        depth, sep, rules = rv.partition(":")
        if not sep:
            raise RuleDBError("rule vector field must be 'depth:r,r,...'")
        try:
            rule_vector = tuple(int(r) for r in rules.split(","))
            positions = () if pos == "-" else tuple(int(p) for p in pos.split(","))
            cfg = MACAConfig(len(rule_vector), rule_vector, int(depth), positions)
        except ValueError as e:
            raise RuleDBError(f"bad MACA config: {e}") from None
        if bits != "-" and set(bits) - {"0", "1"}:
            raise RuleDBError("signature must be a 0/1 string")
        sig = () if bits == "-" else tuple(int(b) for b in bits)
        return cls(label, gene, cfg, sig)


class ShapeRuleDB:
    def __init__(self, entries=()):
        self.entries: dict[str, RuleEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: RuleEntry) -> None:
        if entry.label in self.entries:
            raise RuleDBError(f"duplicate label {entry.label!r}")
        self.entries[entry.label] = entry

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, label: str) -> RuleEntry:
        return self.entries[label]

    def __iter__(self):
        return iter(self.entries.values())

    def label_for(self, signature) -> str | None:
        sig = tuple(int(b) for b in signature)
        for e in self.entries.values():
            if e.signature == sig:
                return e.label
        return None

    def dumps(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.entries.values())

    @classmethod
    def loads(cls, text: str) -> "ShapeRuleDB":
        db = cls()
        for no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                db.add(RuleEntry.from_line(line))
            except RuleDBError as e:
                raise RuleDBError(f"line {no}: {e}") from None
        return db

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ShapeRuleDB":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def rule_db_store(db_path, entry: RuleEntry) -> ShapeRuleDB:
    """Append ``entry`` to the DB at ``db_path`` (created if missing)."""
    p = Path(db_path)
    db = ShapeRuleDB.load(p) if p.exists() else ShapeRuleDB()
    db.add(entry)
    db.save(p)
    return db


def rule_db_lookup(db_path, label: str | None = None):
    """Load the DB; return the entry for ``label`` if given, else the whole DB."""
    db = ShapeRuleDB.load(db_path)
    return db if label is None else db[label]
