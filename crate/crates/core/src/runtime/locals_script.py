import json
import os

import gdb

SOURCES = [s for s in os.environ.get("CCOACH_SOURCES", "").split("\n") if s]
VBITS = os.environ.get("CCOACH_VBITS") == "1"
MAX_FRAMES = int(os.environ.get("CCOACH_MAX_FRAMES", "8"))
MAX_ELEMENTS = 20
UNINIT = "<uninitialized value>"


def own_source(frame):
    sal = frame.find_sal()
    if sal.symtab is None or sal.line == 0:
        return None
    full = sal.symtab.fullname()
    for src in SOURCES:
        if full == src:
            return src
    for src in SOURCES:
        if os.path.basename(full) == os.path.basename(src):
            return src
    return None


def undefined_bytes(address, size):
    # vbits print as hex byte pairs, "00" fully defined, "__" unaddressable.
    try:
        out = gdb.execute("monitor get_vbits 0x%x %d" % (address, size), to_string=True)
    except gdb.error:
        return None
    digits = "".join(out.split())
    pairs = [digits[i:i + 2] for i in range(0, len(digits), 2)]
    if len(pairs) < size:
        return None
    return [p not in ("00", "__") for p in pairs[:size]]


def is_undefined(value):
    if not VBITS or value.address is None:
        return False
    size = value.type.sizeof
    if size == 0:
        return False
    flags = undefined_bytes(int(value.address), size)
    return bool(flags) and any(flags)


def scalar(value):
    t = value.type.strip_typedefs()
    if t.code == gdb.TYPE_CODE_PTR:
        return "NULL" if int(value) == 0 else "0x%x" % int(value)
    if t.code == gdb.TYPE_CODE_INT and t.sizeof == 1:
        return "%d" % int(value) if int(value) < 32 else str(value)
    return " ".join(str(value).split())


def render(name, value, out):
    t = value.type.strip_typedefs()
    if t.code == gdb.TYPE_CODE_ARRAY:
        target = t.target().strip_typedefs()
        lo, hi = t.range()
        if target.code == gdb.TYPE_CODE_INT and target.sizeof == 1 and not VBITS:
            out.append((name, " ".join(str(value).split()), False))
            return
        cells = []
        flagged = []
        for i in range(lo, min(hi, lo + MAX_ELEMENTS - 1) + 1):
            elem = value[i]
            if is_undefined(elem):
                cells.append(UNINIT)
                flagged.append("%s[%d]" % (name, i))
            else:
                cells.append(scalar(elem))
        if hi - lo + 1 > MAX_ELEMENTS:
            cells.append("...")
        out.append((name, "{" + ",".join(cells) + "}", False))
        for elem in flagged:
            out.append((elem, UNINIT, True))
        return
    if is_undefined(value):
        out.append((name, UNINIT, True))
    else:
        out.append((name, scalar(value), False))


def variables(frame, line):
    out = []
    seen = set()
    try:
        block = frame.block()
    except RuntimeError:
        return out
    while block is not None:
        for sym in block:
            if not (sym.is_variable or sym.is_argument) or sym.name in seen:
                continue
            # Locals declared below the stopping line are not in scope yet.
            if not sym.is_argument and sym.line > line:
                continue
            seen.add(sym.name)
            try:
                render(sym.name, sym.value(frame), out)
            except (gdb.error, gdb.MemoryError, RuntimeError):
                continue
        if block.function is not None:
            break
        block = block.superblock
    return [{"name": n, "rendered_value": v, "is_uninitialized": u} for n, v, u in out]


def main():
    frames = []
    try:
        frame = gdb.newest_frame()
    except gdb.error:
        frame = None
    while frame is not None and len(frames) < MAX_FRAMES:
        src = own_source(frame)
        if src is not None:
            line = frame.find_sal().line
            frames.append({
                "function": frame.name() or "??",
                "file": src,
                "line": line,
                "variables": variables(frame, line),
            })
        try:
            frame = frame.older()
        except gdb.error:
            break
    print("CCOACH-JSON " + json.dumps(frames))


main()
