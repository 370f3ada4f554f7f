"""Deterministic synthetic eBPF-like commit corpus and feature table.

The bundled ``data/synthetic_commits.jsonl`` and ``data/synthetic_features.csv``
are exactly ``generate_commits()`` and ``generate_features()`` with the
default seeds; ``python -m commitsurvey.synthetic`` regenerates them.
"""

from __future__ import annotations

import hashlib
import random
from datetime import date, datetime, timedelta, timezone
from importlib import resources
from pathlib import Path

from .ingest import CommitRecord, FeatureRecord, FeatureType, FileChange, read_corpus

DEFAULT_SEED = 20241231
DEFAULT_SIZE = 500

_START = datetime(2017, 1, 1, tzinfo=timezone.utc)
_END = datetime(2024, 12, 31, 23, 59, 59, tzinfo=timezone.utc)

_AUTHORS = [
    ("Alexei Starovoitov", "ast@example.org"),
    ("Daniel Borkmann", "daniel@example.org"),
    ("Andrii Nakryiko", "andrii@example.org"),
    ("Martin KaFai Lau", "martin.lau@example.org"),
    ("Eduard Zingerman", "eddyz87@example.org"),
    ("Kumar Kartikeya Dwivedi", "memxor@example.org"),
    ("Yonghong Song", "yonghong.song@example.org"),
    ("Jiri Olsa", "jolsa@example.org"),
    ("Quentin Monnet", "qmo@example.org"),
    ("Stanislav Fomichev", "sdf@example.org"),
]

_TOPICS = ["bpf_link", "bpf_iter", "token", "spin_lock", "struct_ops", "xdp", "sockmap",
           "tracepoint", "kprobe", "uprobe", "cgroup", "lsm", "ringbuf", "btf", "kfunc"]

_VERBS = [("Fix", 5), ("Add", 4), ("Introduce", 2), ("Support", 2), ("Refactor", 2),
          ("Clean up", 2), ("Optimize", 1), ("Remove unused", 1), ("Rename", 1),
          ("Harden", 1)]

# name, weight, subject prefix, candidate paths, objects
_CATEGORIES = [
    ("verifier", 12, "bpf", ["kernel/bpf/verifier.c", "include/linux/bpf_verifier.h"],
     ["insn range tracking", "instruction bounds for ALU ops", "jmp32 precision",
      "ldimm64 handling", "stack slot liveness", "register state pruning"]),
    ("jit", 6, "bpf, x86", ["arch/x86/net/bpf_jit_comp.c", "arch/arm64/net/bpf_jit_comp.c",
                            "kernel/bpf/core.c"],
     ["tail call emission", "JIT image allocation", "atomic instructions", "trampoline"]),
    ("libbpf", 14, "libbpf", ["tools/lib/bpf/libbpf.c", "tools/lib/bpf/libbpf.h",
                              "tools/lib/bpf/btf.c", "tools/lib/bpf/Makefile"],
     ["CO-RE relocation", "skeleton generation", "map auto-create", "USDT support",
      "link pinning"]),
    ("selftests", 16, "selftests/bpf", ["tools/testing/selftests/bpf/prog_tests/",
                                        "tools/testing/selftests/bpf/progs/",
                                        "tools/testing/selftests/bpf/Makefile"],
     ["test", "flaky test", "verifier tests", "coverage"]),
    ("bpftool", 5, "bpftool", ["tools/bpf/bpftool/prog.c", "tools/bpf/bpftool/map.c",
                               "tools/bpf/bpftool/gen.c"],
     ["JSON output", "skeleton printing", "feature probing"]),
    ("helpers", 8, "bpf", ["kernel/bpf/helpers.c", "kernel/trace/bpf_trace.c"],
     ["helper argument checks", "kfunc registration", "bpf_loop callback"]),
    ("maps", 7, "bpf", ["kernel/bpf/hashtab.c", "kernel/bpf/arraymap.c",
                        "kernel/bpf/ringbuf.c"],
     ["map lookup batching", "per-cpu map update", "ringbuf reservation"]),
    ("syscall", 7, "bpf", ["kernel/bpf/syscall.c", "include/uapi/linux/bpf.h",
                           "tools/include/uapi/linux/bpf.h"],
     ["BPF_LINK_CREATE command", "object pinning", "prog query attr"]),
    ("events", 9, "bpf", ["net/core/filter.c", "kernel/trace/bpf_trace.c",
                          "net/core/sock_map.c", "kernel/bpf/cgroup.c"],
     ["sk_lookup program", "perf event output", "tc redirect", "cgroup sockopt"]),
    ("btf", 4, "bpf", ["kernel/bpf/btf.c", "include/linux/btf.h"],
     ["BTF type dedup", "BTF tag parsing"]),
    ("docs", 3, "bpf, docs", ["Documentation/bpf/verifier.rst",
                              "Documentation/bpf/maps.rst"],
     ["typo", "documentation for instruction set"]),
]

_UNRELATED_PREFIXES = ["btrfs", "bonding", "ext4", "mm", "drm/i915"]


def _hash(*parts: object) -> str:
    return hashlib.sha1("\x00".join(map(str, parts)).encode()).hexdigest()


def _weighted(rng: random.Random, items):
    total = sum(item[1] for item in items)
    x = rng.randrange(total)
    for item in items:
        x -= item[1]
        if x < 0:
            return item
    return items[-1]


def _files(rng: random.Random, paths: list[str]) -> tuple[FileChange, ...]:
    k = rng.choice([1, 1, 1, 2, 2, 3, 5])
    chosen = sorted(set(rng.choice(paths) for _ in range(k)))
    out = []
    for p in chosen:
        if p.endswith("/"):
            p = p + rng.choice(["link.c", "iter.c", "verifier_basic.c", "xdp_redirect.c"])
        size = rng.choice([2, 5, 8, 15, 30, 60, 150])
        ins = rng.randint(0, size)
        out.append(FileChange(p, ins, size - ins))
    return tuple(sorted(out, key=lambda f: f.path))


def generate_commits(n: int = DEFAULT_SIZE, seed: int = DEFAULT_SEED) -> list[CommitRecord]:
    """``n`` synthetic commits, newest first (git log order)."""
    rng = random.Random(seed)
    span = int((_END - _START).total_seconds())
    stamps = sorted(rng.randrange(span) for _ in range(n))
    commits: list[CommitRecord] = []
    prev: str | None = None
    for i, offset in enumerate(stamps):
        cdate = _START + timedelta(seconds=offset)
        adate = cdate - timedelta(seconds=rng.randrange(0, 14 * 86400))
        if adate < _START:
            adate = _START
        name, email = rng.choice(_AUTHORS)
        topic = rng.choice(_TOPICS)
        roll = rng.random()
        h = _hash("synthetic", seed, i)
        parents: tuple[str, ...] = (prev,) if prev else ()
        if roll < 0.08 and prev:
            branch = f"bpf-{topic.replace('_', '-')}-{rng.choice(['fixes', 'updates', 'v2'])}"
            subject = f"Merge branch '{branch}'"
            body = (f"{name} says:\n\n====\nThis series reworks {topic} handling in bpf.\n"
                    "====\n\nLink: https://lore.example.org/bpf/" + h[:12])
            parents = (prev, _hash("side", seed, i))
            files: tuple[FileChange, ...] = ()
        elif roll < 0.10 and prev:
            subject = ("Merge tag 'for-netdev' of "
                       "git://git.example.org/pub/scm/linux/kernel/git/bpf/bpf-next")
            body = (f"Pull bpf-next updates: {topic}, xdp, sockmap and verifier changes.\n\n"
                    "Signed-off-by: Example Maintainer <maint@example.org>")
            parents = (prev, _hash("tag", seed, i))
            files = ()
        elif roll < 0.15:
            prefix = rng.choice(_UNRELATED_PREFIXES)
            subject = f"{prefix}: fix null pointer dereference in teardown path"
            body = ("Found while running bpf selftests on a debug kernel; the bug is not in "
                    f"bpf itself.\n\nSigned-off-by: {name} <{email}>")
            files = (FileChange(f"fs/{prefix.split('/')[0]}/core.c", rng.randint(1, 12),
                                rng.randint(0, 6)),)
        else:
            cat = _weighted(rng, _CATEGORIES)
            cname, _, prefix, paths, objects = cat
            verb = _weighted(rng, _VERBS)[0]
            obj = rng.choice(objects)
            subject = f"{prefix}: {verb} {obj} for {topic}"
            body = (f"This change touches the bpf {cname} code for {topic}.\n\n"
                    f"Signed-off-by: {name} <{email}>")
            if rng.random() < 0.1:
                body = f"Reported-by: syzbot\n{body}\n\nLine with  double  spaces\n\n\nend"
            files = _files(rng, paths)
        commits.append(CommitRecord(h, name, email, adate, cdate, subject, body, parents, files))
        prev = h
    commits.reverse()
    return commits


def generate_features(seed: int = DEFAULT_SEED + 1) -> list[FeatureRecord]:
    rng = random.Random(seed)
    counts = {FeatureType.HELPER: 40, FeatureType.KFUNC: 25, FeatureType.MAP_TYPE: 10,
              FeatureType.PROG_TYPE: 12, FeatureType.ATTACH_TYPE: 14,
              FeatureType.LINK_TYPE: 6, FeatureType.EVENT: 5, FeatureType.FLAG: 8}
    start = date(2017, 1, 1).toordinal()
    end = date(2024, 12, 31).toordinal()
    out = []
    for ftype, k in counts.items():
        lo = date(2022, 1, 1).toordinal() if ftype is FeatureType.KFUNC else start
        for j in range(k):
            day = date.fromordinal(rng.randint(lo, end))
            name = f"bpf_{ftype.value}_{j:02d}"
            if ftype is FeatureType.LINK_TYPE and j == 0:
                name = "bpf_link"
            commit = _hash("feature", name) if rng.random() < 0.5 else None
            out.append(FeatureRecord(name, ftype, day, commit))
    out.sort(key=lambda f: (f.introduced_date, f.feature_type.value, f.name))
    return out


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("commitsurvey") / "data" / "synthetic_commits.jsonl"))


def bundled_features_path() -> Path:
    return Path(str(resources.files("commitsurvey") / "data" / "synthetic_features.csv"))


def load_bundled_corpus() -> list[CommitRecord]:
    return read_corpus(bundled_corpus_path())


def main() -> None:
    from .ingest import write_corpus, write_feature_table

    write_corpus(generate_commits(), bundled_corpus_path())
    write_feature_table(generate_features(), bundled_features_path())


if __name__ == "__main__":
    main()
