"""Deterministic generators for large synthetic policy trees."""

from __future__ import annotations

import random
from pathlib import Path
from typing import List

CLASSES = {
    "file": "ioctl read write create getattr setattr lock append map unlink rename execute open",
    "dir": "ioctl read write create getattr setattr lock search add_name remove_name rmdir open",
    "sock_file": "read write create getattr setattr unlink open",
    "unix_stream_socket": "connectto read write create getattr setopt getopt",
    "fd": "use",
    "process": "fork transition sigchld signal",
    "capability": "chown sys_chroot sys_admin net_admin",
}

GLOBAL_MACROS = """\
define(`r_dir_perms', `{ open getattr read search ioctl lock }')
define(`r_file_perms', `{ getattr open read ioctl lock map }')
define(`w_file_perms', `{ open append write lock map }')
define(`rw_file_perms', `{ r_file_perms w_file_perms }')
define(`create_file_perms', `{ create rename setattr unlink rw_file_perms }')
"""

TE_MACROS = """\
define(`unix_socket_connect', `
allow $1 $2_socket:sock_file write;
allow $1 $3:unix_stream_socket connectto;
')
define(`file_type_auto_trans', `
allow $1 $2:dir { search write add_name };
allow $1 $3:file { create write open };
type_transition $1 $2:file $3;
')
"""


def write_large_policy(root: Path, target_expanded: int = 100_000, seed: int = 7) -> Path:
    """A tree whose attribute-expanded view holds about `target_expanded` rules.

    Half the expanded rules come from literal rules, half from rules on
    attributes that replicate over their members.
    """
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "security_classes").write_text(
        "".join(f"class {c}\n" for c in CLASSES), encoding="utf-8")
    (root / "access_vectors").write_text(
        "".join(f"class {c}\n{{\n    {p}\n}}\n" for c, p in CLASSES.items()), encoding="utf-8")
    (root / "global_macros").write_text(GLOBAL_MACROS, encoding="utf-8")
    (root / "te_macros").write_text(TE_MACROS, encoding="utf-8")

    n_domains, n_types, n_attrs, attr_size = 400, 2000, 50, 40
    domains = [f"dom{i}" for i in range(n_domains)]
    types = [f"type{i}" for i in range(n_types)]
    attrs = [f"attr{i}" for i in range(n_attrs)]
    decls: List[str] = [f"attribute {a};" for a in attrs]
    decls += [f"type {d};" for d in domains]
    members = {a: rng.sample(types, attr_size) for a in attrs}
    owner = {}
    for a, ms in members.items():
        for t in ms:
            owner.setdefault(t, []).append(a)
    for t in types:
        attrs_of = owner.get(t, [])
        decls.append(f"type {t}" + "".join(f", {a}" for a in attrs_of) + ";")
    (root / "attributes").write_text("\n".join(decls[:n_attrs]) + "\n", encoding="utf-8")
    (root / "types.te").write_text("\n".join(decls[n_attrs:]) + "\n", encoding="utf-8")

    perms = {c: p.split() for c, p in CLASSES.items()}
    file_classes = ["file", "dir", "sock_file"]
    literal = target_expanded // 2
    per_attr_rule = attr_size
    attr_rules = -(-(target_expanded - literal) // per_attr_rule)
    seen = set()
    rules: List[str] = []
    while len(rules) < literal:
        d = rng.choice(domains)
        t = rng.choice(types)
        c = rng.choice(file_classes)
        if (d, t, c) in seen:
            continue
        seen.add((d, t, c))
        granted = rng.sample(perms[c], rng.randint(1, 4))
        rules.append(f"allow {d} {t}:{c} {{ {' '.join(granted)} }};")
    attr_seen = set()
    while len(attr_seen) < attr_rules:
        d, a, c = rng.choice(domains), rng.choice(attrs), rng.choice(file_classes)
        if (d, a, c) in attr_seen:
            continue
        attr_seen.add((d, a, c))
        rules.append(f"allow {d} {a}:{c} {{ {' '.join(rng.sample(perms[c], 2))} }};")
    chunk = 5000
    for k in range(0, len(rules), chunk):
        (root / f"part{k // chunk:03d}.te").write_text(
            "\n".join(rules[k:k + chunk]) + "\n", encoding="utf-8")
    return root


def write_parametrized_policy(root: Path, n_rules: int = 5000, n_macros: int = 10,
                              seed: int = 11) -> Path:
    """`n_rules` literal rules and `n_macros` three-argument rule-block macros.

    About a fifth of the rules come from planted macro instances, so the search
    has real matches to find; the rest are random noise.
    """
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "security_classes").write_text(
        "".join(f"class {c}\n" for c in CLASSES), encoding="utf-8")
    (root / "access_vectors").write_text(
        "".join(f"class {c}\n{{\n    {p}\n}}\n" for c, p in CLASSES.items()), encoding="utf-8")
    (root / "global_macros").write_text(GLOBAL_MACROS, encoding="utf-8")

    macro_text = []
    bodies = []
    for m in range(n_macros):
        c1, c2, c3 = rng.sample(["file", "dir", "sock_file", "unix_stream_socket"], 3)
        body = [
            f"allow $1 $2:{c1} {{ {' '.join(sorted(rng.sample(CLASSES[c1].split(), 2)))} }};",
            f"allow $1 $3_data:{c2} {{ {' '.join(sorted(rng.sample(CLASSES[c2].split(), 2)))} }};",
            f"allow $2 $3:{c3} {{ {' '.join(sorted(rng.sample(CLASSES[c3].split(), 2)))} }};",
            "allow $1 $2:fd use;",
        ]
        bodies.append(body)
        macro_text.append(f"define(`macro{m}', `\n" + "\n".join(body) + "\n')\n")
    (root / "te_macros").write_text("".join(macro_text), encoding="utf-8")

    names = [f"n{i}" for i in range(300)]
    types = set(names) | {f"{n}_data" for n in names}
    rules: List[str] = []
    keys = set()

    def key(line: str) -> str:
        return line.split("{")[0].split(" use")[0]

    planted = n_rules // 5
    while len(rules) < planted:
        body = rng.choice(bodies)
        a, b, c = rng.sample(names, 3)
        keep = body if rng.random() < 0.7 else rng.sample(body, 3)
        lines = [l.replace("$1", a).replace("$2", b).replace("$3", c) for l in keep]
        if any(key(l) in keys for l in lines):
            continue
        keys.update(key(l) for l in lines)
        rules.extend(lines)
    all_classes = [c for c in CLASSES if c != "fd"]
    sorted_types = sorted(types)
    while len(rules) < n_rules:
        c = rng.choice(all_classes)
        line = (f"allow {rng.choice(names)} {rng.choice(sorted_types)}:{c} "
                f"{{ {rng.choice(CLASSES[c].split())} }};")
        if key(line) in keys:
            continue
        keys.add(key(line))
        rules.append(line)
    decls = [f"type {t};" for t in sorted(types)]
    (root / "types.te").write_text("\n".join(decls) + "\n", encoding="utf-8")
    (root / "rules.te").write_text("\n".join(rules[:n_rules]) + "\n", encoding="utf-8")
    return root


SMALL_CLASSES = {
    "file": ["read", "write", "open", "getattr"],
    "dir": ["search", "write", "add_name"],
    "sock_file": ["write", "read"],
    "fd": ["use"],
}


def random_rule_block_fixture(rng: random.Random, n_macros: int = 2, n_noise: int = 10):
    """(macro text, policy text) for oracle comparisons; placeholders glue at `_`."""
    names = ["a", "b", "c", "d", "e"]
    suffixes = ["", "", "_sock", "_data"]
    macro_lines, bodies = [], []
    for m in range(n_macros):
        arity = rng.randint(1, 3)
        body = []
        for _ in range(rng.randint(2, 3)):
            src = f"${rng.randint(1, arity)}"
            tgt = f"${rng.randint(1, arity)}{rng.choice(suffixes)}"
            if rng.random() < 0.15:
                body.append(f"type_transition {src} {tgt}:file ${rng.randint(1, arity)}_new;")
                continue
            cls = rng.choice(sorted(SMALL_CLASSES))
            perms = rng.sample(SMALL_CLASSES[cls], rng.randint(1, len(SMALL_CLASSES[cls])))
            body.append(f"allow {src} {tgt}:{cls} {{ {' '.join(perms)} }};")
        # Every placeholder must appear so the arity is what we intended.
        for k in range(1, arity + 1):
            if not any(f"${k}" in line for line in body):
                body.append(f"allow ${k} ${k}:fd use;")
        bodies.append((arity, body))
        macro_lines.append(f"define(`mac{m}', `\n" + "\n".join(body) + "\n')\n")
    rules: List[str] = []
    for arity, body in bodies:
        for _ in range(rng.randint(0, 2)):
            args = [rng.choice(names) for _ in range(arity)]
            for line in body:
                if rng.random() < 0.8:
                    for k in range(arity, 0, -1):
                        line = line.replace(f"${k}", args[k - 1])
                    rules.append(line)
    for _ in range(n_noise):
        cls = rng.choice(sorted(SMALL_CLASSES))
        perm = rng.choice(SMALL_CLASSES[cls])
        target = rng.choice(names) + rng.choice(suffixes)
        rules.append(f"allow {rng.choice(names)} {target}:{cls} {perm};")
    rng.shuffle(rules)
    return "".join(macro_lines), "\n".join(rules) + "\n"
