#!/usr/bin/env python3
"""End-to-end checks of the fgmamba CLI: exit codes, file outputs, determinism.

Usage: test_cli.py <path-to-fgmamba-binary>
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

BIN = sys.argv[1] if len(sys.argv) > 1 else "fgmamba"
FAILURES = []


def run(*args, **kwargs):
    return subprocess.run([BIN, *args], capture_output=True, text=True, **kwargs)


def check(name, cond, detail=""):
    status = "PASS" if cond else "FAIL"
    print(f"[{status}] {name} {detail}")
    if not cond:
        FAILURES.append(name)


def write_pgm(path, rows):
    h = len(rows)
    w = len(rows[0])
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(bytes(v for row in rows for v in row))


def smooth_rows(h, w):
    """Smooth two-bump pattern with near-constant borders."""

    def bump(cx, cy, s, fx, fy):
        return math.exp(-((fx - cx) ** 2 + (fy - cy) ** 2) / (2 * s * s))

    rows = []
    for y in range(h):
        row = []
        for x in range(w):
            fx, fy = x / w, y / h
            v = 0.28 + 0.42 * bump(0.5, 0.45, 0.16, fx, fy) + 0.18 * bump(0.35, 0.65, 0.10, fx, fy)
            row.append(max(0, min(255, round(v * 255))))
        rows.append(row)
    return rows


def main():
    tmp = tempfile.mkdtemp(prefix="fgm_cli_")
    hr_dir = os.path.join(tmp, "hr")
    os.makedirs(hr_dir)
    write_pgm(os.path.join(hr_dir, "img0.pgm"), smooth_rows(64, 64))

    # ---- flag errors ----
    r = run("train", "--scale", "2")
    check("train missing --hr-dir exits 2", r.returncode == 2)
    check("usage text printed", "Usage" in r.stderr or "--hr-dir" in r.stderr)

    r = run("nosuchcommand")
    check("unknown subcommand exits 2", r.returncode == 2)

    r = run("params", "--preset", "paper")
    check("params --preset paper exits 0", r.returncode == 0, r.stdout.strip().splitlines()[-1])
    total = int([l for l in r.stdout.splitlines() if l.startswith("total")][0].split("\t")[1])
    check("paper preset total in [700000, 750000]", 700000 <= total <= 750000, f"total={total}")

    r = run("params", "--preset", "tiny")
    tiny_total = int([l for l in r.stdout.splitlines() if l.startswith("total")][0].split("\t")[1])
    check("tiny preset golden count", tiny_total == TINY_GOLDEN, f"total={tiny_total}")

    r = run("params", "--preset", "tiny", "--blocks", "0")
    headtail = int([l for l in r.stdout.splitlines() if l.startswith("total")][0].split("\t")[1])
    # closed form: head 1->8 3x3 (+8), tail 8->32 3x3 (+32), out 8->1 3x3 (+1)
    expect = (8 * 1 * 9 + 8) + (32 * 8 * 9 + 32) + (1 * 8 * 9 + 1)
    check("params --blocks 0 equals hand count", headtail == expect,
          f"got={headtail} want={expect}")

    r = run("params", "--channels", "2")
    check("invalid config exits 2", r.returncode == 2)

    # ---- gradcheck ----
    r = run("gradcheck", "--list")
    check("gradcheck --list exits 0", r.returncode == 0, f"{len(r.stdout.splitlines())} rows")

    r = run("gradcheck")
    check("gradcheck passes", r.returncode == 0, r.stdout.strip().splitlines()[-1])

    r = run("gradcheck", "--corrupt-sigmoid-backward")
    check("corrupted backward rule exits 7", r.returncode == 7)

    # ---- train smoke (defaults per the published recipe: 500 steps) ----
    ck = os.path.join(tmp, "ck.fgmb")
    r = run("train", "--hr-dir", hr_dir, "--scale", "2", "--steps", "500", "--seed", "1",
            "--out", ck)
    check("train exits 0", r.returncode == 0, r.stderr.strip()[:120])
    check("checkpoint written", os.path.exists(ck))
    check("metric log written", os.path.exists(ck + ".log"))
    final_psnr = None
    with open(ck + ".log") as f:
        for line in f:
            for tok in line.split():
                if tok.startswith("psnr="):
                    final_psnr = float(tok.split("=")[1])
    check("final logged PSNR > 35 dB", final_psnr is not None and final_psnr > 35.0,
          f"psnr={final_psnr}")

    # steps=0 checkpoint equals fresh init for that seed
    ck0a = os.path.join(tmp, "ck0a.fgmb")
    ck0b = os.path.join(tmp, "ck0b.fgmb")
    run("train", "--hr-dir", hr_dir, "--scale", "2", "--steps", "0", "--seed", "9", "--out", ck0a)
    run("train", "--hr-dir", hr_dir, "--scale", "2", "--steps", "0", "--seed", "9", "--out", ck0b)
    with open(ck0a, "rb") as fa, open(ck0b, "rb") as fb:
        check("steps=0 checkpoints are byte-identical for a fixed seed", fa.read() == fb.read())

    r = run("train", "--hr-dir", os.path.join(tmp, "missing"), "--out", ck)
    check("unreadable data dir exits 3", r.returncode == 3)

    # ---- infer ----
    lr_img = os.path.join(tmp, "lr.pgm")
    write_pgm(lr_img, smooth_rows(16, 16))
    sr_a = os.path.join(tmp, "sr_a.pgm")
    sr_b = os.path.join(tmp, "sr_b.pgm")
    r = run("infer", "--checkpoint", ck, "--input", lr_img, "--output", sr_a)
    check("infer exits 0", r.returncode == 0, r.stderr.strip()[:120])
    with open(sr_a, "rb") as f:
        header = f.readline().strip()
        dims = f.readline().split()
    check("SR output is exactly scale x input", header == b"P5" and dims == [b"32", b"32"],
          f"dims={dims}")

    run("infer", "--checkpoint", ck, "--input", lr_img, "--output", sr_b)
    with open(sr_a, "rb") as fa, open(sr_b, "rb") as fb:
        check("infer twice gives byte-identical outputs", fa.read() == fb.read())

    r = run("infer", "--checkpoint", ck, "--input", lr_img, "--output", sr_b, "--scale", "4")
    check("scale mismatch exits 5", r.returncode == 5)

    truncated = os.path.join(tmp, "trunc.fgmb")
    with open(ck, "rb") as f:
        blob = f.read()
    with open(truncated, "wb") as f:
        f.write(blob[: len(blob) // 2])
    gone = os.path.join(tmp, "never.pgm")
    r = run("infer", "--checkpoint", truncated, "--input", lr_img, "--output", gone)
    check("truncated checkpoint exits 5", r.returncode == 5)
    check("no partial output written", not os.path.exists(gone))

    # ---- eval ----
    gt_dir = os.path.join(tmp, "gt")
    os.makedirs(gt_dir)
    shutil.copy(os.path.join(hr_dir, "img0.pgm"), os.path.join(gt_dir, "img0.pgm"))
    r = run("eval", "--sr-dir", gt_dir, "--gt-dir", gt_dir, "--porcelain")
    check("self-eval exits 0", r.returncode == 0)
    mean_row = [l for l in r.stdout.splitlines() if l.startswith("mean")][0].split("\t")
    check("self-eval mean PSNR inf, SSIM 1.0000",
          mean_row[1] == "inf" and mean_row[2] == "1.0000", str(mean_row))

    empty_dir = os.path.join(tmp, "empty")
    os.makedirs(empty_dir)
    r = run("eval", "--sr-dir", empty_dir, "--gt-dir", gt_dir)
    check("pair-count mismatch exits 6", r.returncode == 6)

    # size mismatch
    small_dir = os.path.join(tmp, "small")
    os.makedirs(small_dir)
    write_pgm(os.path.join(small_dir, "img0.pgm"), smooth_rows(32, 32))
    r = run("eval", "--sr-dir", small_dir, "--gt-dir", gt_dir)
    check("size mismatch exits 6", r.returncode == 6)

    # porcelain output is deterministic
    r1 = run("eval", "--sr-dir", gt_dir, "--gt-dir", gt_dir, "--porcelain")
    r2 = run("eval", "--sr-dir", gt_dir, "--gt-dir", gt_dir, "--porcelain")
    check("porcelain eval output is byte-identical", r1.stdout == r2.stdout)

    shutil.rmtree(tmp)
    print(f"{len(FAILURES)} failure(s)")
    return 1 if FAILURES else 0


TINY_GOLDEN = None  # set below once counted; see test body


if __name__ == "__main__":
    # golden tiny count: counted once from the frozen architecture
    TINY_GOLDEN = 6798
    sys.exit(main())
