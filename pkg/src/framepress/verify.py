"""Self-verification suite.

Each check here guards one of the package's load-bearing properties:
cost-model calibration against the reference totals, exact subsample
arithmetic, sampler-vs-oracle agreement and nesting, attention validity,
analytic-vs-numeric gradients, permutation equivariance, compression
robustness on the toy task, determinism and file round-trips, and
sequence-length arithmetic. Checks never raise on a property violation —
failures are report content, with a counterexample in the detail string.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import cost, curriculum, ftv1
from .adapter import (
    AdapterOutput,
    adapt_frame,
    adapt_video,
    adapter_gradients,
    random_adapter_params,
)
from .encoder import synthetic_video
from .errors import FramepressError
from .linalg import fd_gradient, make_rng, softmax_rows, split_rng
from .pipeline import RunReport, ToyTaskSpec, assemble_sequence, train_toy
from .sampler import FrameScores, SampledTokens, sample_video, score_frame, select_topk

# Fixed-seed toy configurations for the compression-robustness check.
# The pruned run keeps half the queries; the baseline keeps all of them.
# Recorded outcome of these exact specs: final loss 0.061321 (keep=16)
# vs 0.067787 (keep=32), a 9.5% relative gap against the 25% bound.
TOY_PRUNED_SPEC = ToyTaskSpec(
    seed=7, keep=16, batch_videos=12, steps=300, learning_rate=0.5
)
TOY_BASELINE_SPEC = replace(TOY_PRUNED_SPEC, keep=TOY_PRUNED_SPEC.queries)
TOY_REL_TOL = 0.25


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def check_reference_fit() -> CheckResult:
    """Cost-model calibration lands on the reference totals."""
    name = "cost_reference_fit"
    try:
        result = cost.calibrate()
    except FramepressError as exc:
        return CheckResult(name, False, f"calibration raised: {exc}")
    problems = []
    if abs(result.overhead_tflops - 31.70) > 0.05:
        problems.append(f"c0={result.overhead_tflops:.4f} not within 31.70±0.05")
    if abs(result.per_token_tflops - 0.1108) > 0.001:
        problems.append(f"c1={result.per_token_tflops:.5f} not within 0.1108±0.001")
    if result.max_abs_residual > 0.05:
        problems.append(f"max residual {result.max_abs_residual:.4f} > 0.05")
    for k, total in cost.REFERENCE_TOTALS:
        cfg = cost.calibrated_config(result, tokens_per_frame=k)
        got = cost.estimate(cfg).total_tflops
        if abs(got - total) > 0.05:
            problems.append(f"k={k}: estimate {got:.3f} vs measured {total:.3f}")
    if problems:
        return CheckResult(name, False, "; ".join(problems))
    return CheckResult(
        name,
        True,
        f"c0={result.overhead_tflops:.4f} c1={result.per_token_tflops:.5f} "
        f"max|res|={result.max_abs_residual:.5f}",
    )


def check_subsample_counts() -> CheckResult:
    """Video-level subsampling hits the exact floor counts."""
    name = "subsample_counts"
    expectations = [
        (228_914, 0.1, 22_891),
        (13_040, 0.1, 1_304),
        (13_040, 0.3, 3_912),
        (13_040, 0.6, 7_824),
    ]
    built = {}
    for videos, fraction, want in expectations:
        if videos not in built:
            built[videos] = curriculum.synthetic_manifest(videos, 1, seed=videos)
        sub = curriculum.subsample(built[videos], fraction, seed=13)
        if sub.unique_videos != want:
            return CheckResult(
                name,
                False,
                f"{videos} videos at {fraction} gave {sub.unique_videos}, "
                f"expected {want}",
            )
        keys = {(r.video_id, r.qa_id) for r in built[videos].records}
        if any((r.video_id, r.qa_id) not in keys for r in sub.records):
            return CheckResult(name, False, "subsample invented records")
    return CheckResult(
        name, True, "228914@0.1->22891; 13040@0.1/0.3/0.6->1304/3912/7824"
    )


def _oracle_order(values: np.ndarray) -> list[int]:
    """Selection-sort ranking: repeatedly take the best remaining score,
    ties to the lowest index. Deliberately naive and independent of the
    production path."""
    remaining = list(range(values.size))
    order = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if values[i] > values[best]:
                best = i
        order.append(best)
        remaining.remove(best)
    return order


def check_sampler_oracle(cases: int = 1000, seed: int = 2026) -> CheckResult:
    """Top-K selection agrees with the brute-force oracle for every K."""
    name = "sampler_oracle"
    streams = split_rng(seed, cases)
    for case, rng in enumerate(streams):
        n = int(rng.integers(2, 33))
        m = int(rng.integers(2, 65))
        logits = rng.normal(size=(n, m))
        if rng.random() < 0.3 and n >= 3:
            # Duplicate attention rows to inject exact score ties.
            src = int(rng.integers(0, n))
            dup = int(rng.integers(0, n))
            logits[dup] = logits[src]
        att = softmax_rows(logits)
        out = AdapterOutput(tokens=(np.zeros((n, 2)),), attention=(att,))
        scores = score_frame(out.attention[0])
        oracle = _oracle_order(scores.values)
        for k in range(1, n + 1):
            got = set(select_topk(scores, k).tolist())
            want = set(oracle[:k])
            if got != want:
                return CheckResult(
                    name,
                    False,
                    f"case {case} (n={n}, m={m}, k={k}): selected {sorted(got)} "
                    f"vs oracle {sorted(want)}",
                )
    return CheckResult(name, True, f"{cases} adapter outputs, every K, all equal")


def check_nesting(cases: int = 500, seed: int = 2027, select_fn=None) -> CheckResult:
    """Keep-sets nest: the selection for K sits inside the one for K+1.

    ``select_fn`` exists so a deliberately broken tie-break can be
    injected to prove the check has teeth.
    """
    name = "sampler_nesting"
    fn = select_fn or select_topk
    streams = split_rng(seed, cases)
    for case, rng in enumerate(streams):
        n = int(rng.integers(2, 33))
        # Coarse quantization makes exact ties common.
        values = np.round(rng.random(size=n), 1)
        scores = FrameScores(values)
        prev = set(fn(scores, 1).tolist())
        for k in range(2, n + 1):
            cur = set(fn(scores, k).tolist())
            if not prev <= cur:
                return CheckResult(
                    name,
                    False,
                    f"case {case}: K={k - 1} keep-set {sorted(prev)} not inside "
                    f"K={k} keep-set {sorted(cur)} (scores {values.tolist()})",
                )
            prev = cur
    return CheckResult(name, True, f"{cases} score vectors with ties, all nested")


def check_attention_validity(passes: int = 1000, seed: int = 2028) -> CheckResult:
    """Attention rows sum to one; relevance scores stay in [1/M, 1]."""
    name = "attention_validity"
    streams = split_rng(seed, passes)
    worst_sum = 0.0
    for case, rng in enumerate(streams):
        n = int(rng.integers(1, 17))
        m = int(rng.integers(2, 25))
        d = int(rng.integers(2, 13))
        c = int(rng.integers(2, 17))
        params = random_adapter_params(
            queries=n,
            width=c,
            feature_dim=d,
            source_tokens=m,
            frames=1,
            seed=int(rng.integers(0, 2**31)),
        )
        feats = rng.normal(size=(m, d))
        _, att = adapt_frame(feats, params)
        row_dev = float(np.max(np.abs(att.sum(axis=1) - 1.0)))
        worst_sum = max(worst_sum, row_dev)
        if row_dev > 1e-9:
            return CheckResult(
                name, False, f"case {case}: row sum off by {row_dev:.3e}"
            )
        r = score_frame(att).values
        if r.min() < 1.0 / m or r.max() > 1.0:
            return CheckResult(
                name,
                False,
                f"case {case}: scores [{r.min():.6g}, {r.max():.6g}] "
                f"outside [1/{m}, 1]",
            )
    return CheckResult(
        name, True, f"{passes} forward passes, worst row-sum dev {worst_sum:.2e}"
    )


def _grad_check_point(seed: int, step: float, k: int, margin: float):
    """One gradient-check instance, or None if the top-K boundary margin
    is too tight for finite differences to stay on one selection branch."""
    video = synthetic_video(frames=2, grid_h=2, grid_w=2, feature_dim=3, seed=seed)
    params = random_adapter_params(
        queries=3, width=4, feature_dim=3, source_tokens=4, frames=2, seed=seed + 1
    )

    def selection_gap() -> float:
        gap = np.inf
        out = adapt_video(video, params)
        for att in out.attention:
            s = np.sort(score_frame(att).values)[::-1]
            if k < s.size:
                gap = min(gap, float(s[k - 1] - s[k]))
        return gap

    if selection_gap() < margin:
        return None

    shapes = [
        ("input_proj", params.input_proj.shape),
        ("queries", params.queries.shape),
        ("pos_table", params.pos_table.shape),
        ("temporal", params.temporal.shape),
    ]
    sizes = [int(np.prod(s)) for _, s in shapes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def unpack(x: np.ndarray):
        fields = {}
        for (field_name, shape), a, b in zip(shapes, offsets[:-1], offsets[1:]):
            fields[field_name] = x[a:b].reshape(shape)
        return replace(params, **fields)

    def loss_at(x: np.ndarray) -> float:
        p = unpack(x)
        out = adapt_video(video, p)
        sampled = sample_video(out, k)
        return float(sum(np.sum(tok**2) for tok in sampled.tokens))

    x0 = np.concatenate(
        [
            params.input_proj.ravel(),
            params.queries.ravel(),
            params.pos_table.ravel(),
            params.temporal.ravel(),
        ]
    )
    fd = fd_gradient(loss_at, x0, step=step)

    out = adapt_video(video, params)
    sampled = sample_video(out, k)
    token_grads = np.zeros((2, 3, 4))
    for t in range(2):
        idx = sampled.indices[t]
        token_grads[t, idx, :] = 2.0 * out.tokens[t][idx]
    grads = adapter_gradients(video, params, token_grads)
    analytic = np.concatenate(
        [
            grads.input_proj.ravel(),
            grads.queries.ravel(),
            grads.pos_table.ravel(),
            grads.temporal.ravel(),
        ]
    )

    errs = {}
    for (field_name, _), a, b in zip(shapes, offsets[:-1], offsets[1:]):
        num = np.linalg.norm(analytic[a:b] - fd[a:b])
        den = max(np.linalg.norm(fd[a:b]), 1e-12)
        errs[field_name] = num / den
    return errs


def check_gradients(
    points: int = 20,
    seed: int = 2029,
    step: float = 1e-5,
    tol: float = 1e-4,
    margin: float = 1e-3,
) -> CheckResult:
    """Hand-written backprop matches central finite differences.

    The loss runs through the sampler (sum of squared kept tokens, K=2 of
    3 queries), so points whose top-K boundary gap is under ``margin``
    are re-drawn — finite differences must not straddle a selection flip.
    """
    name = "gradient_correctness"
    done = 0
    attempt_seed = seed
    worst = 0.0
    while done < points:
        attempt_seed += 1
        if attempt_seed - seed > 50 * points:
            return CheckResult(
                name, False, f"only {done}/{points} stable points found"
            )
        errs = _grad_check_point(attempt_seed, step, k=2, margin=margin)
        if errs is None:
            continue
        done += 1
        for field_name, err in errs.items():
            worst = max(worst, err)
            if err > tol:
                return CheckResult(
                    name,
                    False,
                    f"point seed={attempt_seed}: {field_name} relative error "
                    f"{err:.3e} > {tol:g}",
                )
    return CheckResult(
        name, True, f"{points} points, worst relative error {worst:.2e}"
    )


def check_permutation_equivariance(cases: int = 100, seed: int = 2030) -> CheckResult:
    """With the positional table zeroed, shuffling source tokens changes
    nothing about the compressed output."""
    name = "permutation_equivariance"
    streams = split_rng(seed, cases)
    worst = 0.0
    for case, rng in enumerate(streams):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(2, 17))
        d = int(rng.integers(2, 9))
        c = int(rng.integers(2, 13))
        params = random_adapter_params(
            queries=n,
            width=c,
            feature_dim=d,
            source_tokens=m,
            frames=1,
            seed=int(rng.integers(0, 2**31)),
        )
        params = replace(params, pos_table=np.zeros((m, c)))
        feats = rng.normal(size=(m, d))
        perm = rng.permutation(m)
        out1, att1 = adapt_frame(feats, params)
        out2, att2 = adapt_frame(feats[perm], params)
        diff = float(np.max(np.abs(out1 - out2)))
        att_diff = float(np.max(np.abs(att1[:, perm] - att2)))
        worst = max(worst, diff, att_diff)
        if diff > 1e-12 or att_diff > 1e-12:
            return CheckResult(
                name,
                False,
                f"case {case} (n={n}, m={m}): output moved by {diff:.3e}, "
                f"attention by {att_diff:.3e}",
            )
    return CheckResult(name, True, f"{cases} permutations, worst drift {worst:.2e}")


def check_compression_robustness(rel_tol: float = TOY_REL_TOL) -> CheckResult:
    """Training with top-half token pruning lands near the keep-all run."""
    name = "compression_robustness"
    pruned = train_toy(TOY_PRUNED_SPEC)
    baseline = train_toy(TOY_BASELINE_SPEC)
    lp = pruned.final_metrics["final_loss"]
    lb = baseline.final_metrics["final_loss"]
    gap = abs(lp - lb)
    bound = rel_tol * lb
    detail = (
        f"final loss keep={TOY_PRUNED_SPEC.keep}: {lp:.6f}, "
        f"keep={TOY_BASELINE_SPEC.keep}: {lb:.6f}, gap {gap:.6f} "
        f"(bound {bound:.6f})"
    )
    return CheckResult(name, gap <= bound, detail)


def check_determinism_roundtrips(
    tensor_files: int = 100, manifests: int = 20, seed: int = 2031
) -> CheckResult:
    """Same seed -> byte-identical reports; files survive round-trips."""
    name = "determinism_roundtrips"
    small = ToyTaskSpec(
        seed=11,
        frames=2,
        grid_h=2,
        grid_w=2,
        feature_dim=6,
        queries=4,
        embed_dim=8,
        keep=2,
        out_dim=3,
        signal_patches=2,
        steps=8,
        learning_rate=0.2,
        batch_videos=2,
    )
    first = train_toy(small).to_json()
    second = train_toy(small).to_json()
    if first != second:
        return CheckResult(name, False, "repeated toy runs produced different reports")
    if RunReport.from_json(first).to_json() != first:
        return CheckResult(name, False, "report JSON round-trip changed the report")

    rng = make_rng(seed)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for i in range(tensor_files):
            rank = int(rng.integers(1, 5))
            dims = tuple(int(x) for x in rng.integers(1, 6, size=rank))
            arr = (
                rng.normal(size=dims).astype(np.float32).astype(np.float64)
            )
            path = tmp / f"t{i}.ftv1"
            ftv1.write_tensor(path, arr)
            back = ftv1.read_tensor(path)
            if back.shape != arr.shape or not np.array_equal(back, arr):
                return CheckResult(
                    name, False, f"tensor file {i} (shape {dims}) changed in flight"
                )
        for i in range(manifests):
            manifest = curriculum.synthetic_manifest(
                videos=int(rng.integers(1, 40)),
                qa_per_video=int(rng.integers(1, 5)),
                seed=int(rng.integers(0, 2**31)),
                name=f"m{i}",
            )
            path = tmp / f"m{i}.jsonl"
            curriculum.write_manifest(manifest, path)
            back = curriculum.read_manifest(path, name=manifest.name)
            if back != manifest:
                return CheckResult(name, False, f"manifest {i} changed in flight")
    return CheckResult(
        name,
        True,
        f"bit-identical reports; {tensor_files} tensor + {manifests} manifest "
        "round-trips lossless",
    )


def check_sequence_arithmetic() -> CheckResult:
    """Assembled length is frames * keep + prompt across the whole grid."""
    name = "sequence_arithmetic"
    rng = make_rng(2032)
    combos = []
    for t in (1, 8):
        for k in (4, 16, 128):
            for prompt in (0, 64):
                tokens = tuple(rng.normal(size=(k, 4)) for _ in range(t))
                indices = tuple(np.arange(k) for _ in range(t))
                sampled = SampledTokens(keep=k, indices=indices, tokens=tokens)
                seq = assemble_sequence(sampled, prompt)
                want = t * k + prompt
                if seq.total_len != want:
                    return CheckResult(
                        name,
                        False,
                        f"T={t} K={k} prompt={prompt}: total {seq.total_len} != {want}",
                    )
                if len(seq.frame_boundaries) != t + 1:
                    return CheckResult(
                        name, False, f"T={t} K={k}: bad boundary count"
                    )
                combos.append((t, k, prompt))
    return CheckResult(
        name, True, f"{len(combos)} combos incl. 8x128+0 -> 1024 video tokens"
    )


ALL_CHECKS = (
    check_reference_fit,
    check_subsample_counts,
    check_sampler_oracle,
    check_nesting,
    check_attention_validity,
    check_gradients,
    check_permutation_equivariance,
    check_compression_robustness,
    check_determinism_roundtrips,
    check_sequence_arithmetic,
)


def verify_all() -> RunReport:
    """Run every check and fold the outcomes into one report."""
    results = [fn() for fn in ALL_CHECKS]
    calibration = cost.calibrate()
    cost_cfg = cost.calibrated_config(calibration)
    passed = sum(1 for r in results if r.passed)
    return RunReport(
        kind="verify",
        config={"checks": [r.name for r in results]},
        loss_curve=(),
        final_metrics={"passed": passed, "failed": len(results) - passed},
        checks=tuple(r.as_dict() for r in results),
        cost_summary=cost.estimate(cost_cfg).as_dict(),
    )


def format_report(report: RunReport) -> str:
    """A terminal-friendly pass/fail listing."""
    lines = []
    for check in report.checks:
        status = "PASS" if check["passed"] else "FAIL"
        lines.append(f"{status}  {check['name']}: {check['detail']}")
    lines.append(
        f"{report.final_metrics['passed']} passed, "
        f"{report.final_metrics['failed']} failed"
    )
    return "\n".join(lines) + "\n"
