"""Real exemplar selection: conditional greedy, herding and random."""
import inspect
import json
import math
import typing as T
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Samples
from .distill import SyntheticSet, get_objective
from .errors import ConfigError, DataError, ShapeError
from .model.network.mlp import ParamVector, as_tensor, embed
from .utils.log import logger
from .utils.rand import derive_rng


SELECTORS = ('greedy', 'herding', 'random')


@dataclass
class SelectionResult:
    """Chosen indices into the task's real samples, in pick order.

    Attributes:
        indices: Picked sample indices.
        objective_trace: Objective value after every pick,
            nan when the selector does not evaluate one.
        per_class_counts: Number of picks per class.
        method: Selector name.
    """
    indices: T.List[int]
    objective_trace: T.List[float]
    per_class_counts: T.Dict[int, int] = field(default_factory=dict)
    method: str = 'greedy'

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        self.objective_trace = [float(v) for v in self.objective_trace]
        self.per_class_counts = {
            int(c): int(n) for c, n in sorted(self.per_class_counts.items())}
        if len(set(self.indices)) != len(self.indices):
            raise DataError('Selected indices are not unique.')
        if len(self.objective_trace) != len(self.indices):
            raise ShapeError(
                f'{len(self.indices)} picks but '
                f'{len(self.objective_trace)} trace values.')

    def __len__(self) -> int:
        return len(self.indices)

    def to_json(self, path: T.Optional[T.Union[str, Path]] = None) -> str:
        trace = [None if math.isnan(v) else v for v in self.objective_trace]
        text = json.dumps({
            'method': self.method,
            'indices': self.indices,
            'objective_trace': trace,
            'per_class_counts': {
                str(c): n for c, n in self.per_class_counts.items()},
        }, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path: T.Union[str, Path]) -> "SelectionResult":
        text = str(text_or_path)
        if not text.lstrip().startswith('{'):
            text = Path(text_or_path).read_text()
        d = json.loads(text)
        return cls(
            indices=d['indices'],
            objective_trace=[
                float('nan') if v is None else v
                for v in d['objective_trace']],
            per_class_counts={
                int(c): n for c, n in d['per_class_counts'].items()},
            method=d.get('method', 'greedy'))


def _check_population(R: Samples, k_real: int) -> T.Dict[int, np.ndarray]:
    if k_real < 1:
        raise ConfigError(f'k_real must be >= 1, got {k_real}')
    groups = R.class_indices()
    if not groups:
        raise DataError('No real samples to select from.')
    for c, idx in groups.items():
        if len(idx) < k_real:
            raise DataError(
                f'Class {c} has {len(idx)} samples, need {k_real}.')
    return groups


def _embeddings(theta: ParamVector, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return embed(theta, x).numpy()


def _running_mean_distances(
        vectors: np.ndarray,
        running_sum: np.ndarray,
        count: int,
        target: np.ndarray,
        ) -> np.ndarray:
    """Squared distance to ``target`` of the running mean after adding
    each row of ``vectors`` to a set with sum ``running_sum`` and
    ``count`` members."""
    means = (running_sum[None, :] + vectors) / (count + 1)
    return ((means - target[None, :]) ** 2).sum(axis=1)


def _synthetic_rows(S: T.Optional[SyntheticSet]) -> T.Dict[int, np.ndarray]:
    if S is None:
        return {}
    return {c: v.numpy() for c, v in S.data.items() if v.shape[0] > 0}


def _greedy_dm(
        R: Samples, syn: T.Dict[int, np.ndarray], theta: ParamVector,
        k_real: int, groups: T.Dict[int, np.ndarray],
        ) -> T.Tuple[T.List[int], T.List[float]]:
    emb = _embeddings(theta, R.x)
    targets = {c: emb[idx].mean(axis=0) for c, idx in groups.items()}
    sums, counts, terms = {}, {}, {}
    for c in groups:
        if c in syn:
            s_emb = _embeddings(theta, syn[c])
            sums[c] = s_emb.sum(axis=0)
            counts[c] = s_emb.shape[0]
        else:
            sums[c] = np.zeros(emb.shape[1])
            counts[c] = 0
        mean = sums[c] / counts[c] if counts[c] else np.zeros(emb.shape[1])
        terms[c] = float(((mean - targets[c]) ** 2).sum())
    remaining = {c: list(idx) for c, idx in groups.items()}
    picked = {c: 0 for c in groups}
    indices, trace = [], []
    for _ in range(len(groups) * k_real):
        best = None
        for c in sorted(groups):
            if picked[c] >= k_real:
                continue
            cand = np.asarray(remaining[c], dtype=np.int64)
            d = _running_mean_distances(emb[cand], sums[c], counts[c], targets[c])
            j = int(np.argmin(d))
            delta = float(d[j]) - terms[c]
            # ties go to the lowest sample index
            if best is None or delta < best[0] or \
                    (delta == best[0] and cand[j] < best[2]):
                best = (delta, c, int(cand[j]), float(d[j]), j)
        _, c, i, new_term, j = best
        sums[c] = sums[c] + emb[i]
        counts[c] += 1
        terms[c] = new_term
        picked[c] += 1
        remaining[c].pop(j)
        indices.append(i)
        trace.append(sum(terms[k] for k in sorted(terms)) / len(terms))
    return indices, trace


def _greedy_generic(
        R: Samples, syn: T.Dict[int, np.ndarray], theta: ParamVector,
        k_real: int, groups: T.Dict[int, np.ndarray], objective: str,
        ) -> T.Tuple[T.List[int], T.List[float]]:
    fn = get_objective(objective)
    reports_flag = {'return_flag', 'warn'} <= set(inspect.signature(fn).parameters)
    degenerate = False
    chosen: T.Dict[int, T.List[int]] = {c: [] for c in groups}

    def memory_rows(extra: T.Optional[int] = None) -> T.Dict[int, torch.Tensor]:
        rows = {}
        for c in groups:
            picks = list(chosen[c])
            if extra is not None and R.y[extra] == c:
                picks.append(extra)
            parts = [syn[c]] if c in syn else []
            if picks:
                parts.append(R.x[np.asarray(picks, dtype=np.int64)])
            if parts:
                rows[c] = as_tensor(np.concatenate(parts))
        return rows

    indices, trace = [], []
    for _ in range(len(groups) * k_real):
        best_value, best_i = math.inf, None
        for i in range(len(R)):
            c = int(R.y[i])
            if len(chosen[c]) >= k_real or i in chosen[c]:
                continue
            if reports_flag:
                value, flag = fn(
                    memory_rows(i), R, [theta], return_flag=True, warn=False)
                degenerate = degenerate or flag
            else:
                value = fn(memory_rows(i), R, [theta])
            value = float(value.detach())
            if value < best_value:
                best_value, best_i = value, i
        if best_i is None:
            raise DataError('No eligible candidate left.')
        chosen[int(R.y[best_i])].append(best_i)
        indices.append(best_i)
        trace.append(best_value)
    if degenerate:
        logger.warning(
            f'Zero-norm gradients met while scoring candidates with '
            f'{objective}, counted as the worst case.')
    return indices, trace


def _counts(R: Samples, indices: T.Sequence[int]) -> T.Dict[int, int]:
    counts = {c: 0 for c in R.classes}
    for i in indices:
        counts[int(R.y[i])] += 1
    return counts


def greedy_select(
        R: Samples,
        S: T.Optional[SyntheticSet],
        theta: ParamVector,
        k_real: int,
        objective: str = 'dm',
        incremental: bool = True,
        ) -> SelectionResult:
    """Conditional greedy selection of real exemplars.

    Every round adds the eligible candidate that minimizes the
    objective of (selected reals + synthetic rows) against all real
    samples at ``theta``. A class stops being eligible once it holds
    ``k_real`` picks; ties go to the lowest index.

    Args:
        R: Real samples of the task.
        S: Synthetic set the reals are chosen to complement, may be None.
        theta: End-of-task model.
        k_real: Real exemplars per class.
        objective: Registered objective name.
        incremental: Use running class means for 'dm'.
    """
    groups = _check_population(R, k_real)
    syn = _synthetic_rows(S)
    extra = set(syn) - set(groups)
    if extra:
        raise DataError(
            f'Synthetic classes {sorted(extra)} have no real samples.')
    if objective == 'dm' and incremental:
        indices, trace = _greedy_dm(R, syn, theta, k_real, groups)
    else:
        indices, trace = _greedy_generic(
            R, syn, theta, k_real, groups, objective)
    logger.info(
        f'Greedy ({objective}) picked {len(indices)} real exemplars, '
        f'objective {trace[-1]:.6f}')
    return SelectionResult(indices, trace, _counts(R, indices), 'greedy')


def herding_select(
        R: Samples, theta: ParamVector, k_real: int) -> SelectionResult:
    """Classic herding: per class, keep adding the sample that moves the
    running embedding mean closest to the class mean."""
    groups = _check_population(R, k_real)
    emb = _embeddings(theta, R.x)
    indices, trace = [], []
    for c in sorted(groups):
        remaining = list(groups[c])
        target = emb[groups[c]].mean(axis=0)
        running = np.zeros(emb.shape[1])
        for r in range(k_real):
            cand = np.asarray(remaining, dtype=np.int64)
            d = _running_mean_distances(emb[cand], running, r, target)
            j = int(np.argmin(d))
            i = int(cand[j])
            running = running + emb[i]
            remaining.pop(j)
            indices.append(i)
            trace.append(float(d[j]))
    return SelectionResult(indices, trace, _counts(R, indices), 'herding')


def random_select(R: Samples, k_real: int, seed: int = 0) -> SelectionResult:
    """Seeded class-stratified uniform sample."""
    groups = _check_population(R, k_real)
    rng = derive_rng(seed, 'random-select')
    indices = []
    for c in sorted(groups):
        indices.extend(int(i) for i in rng.choice(groups[c], k_real, replace=False))
    trace = [float('nan')] * len(indices)
    return SelectionResult(indices, trace, _counts(R, indices), 'random')


def select(
        selector: str,
        R: Samples,
        S: T.Optional[SyntheticSet],
        theta: ParamVector,
        k_real: int,
        objective: str = 'dm',
        seed: int = 0,
        ) -> SelectionResult:
    """Dispatch to a selector by name."""
    if selector == 'greedy':
        return greedy_select(R, S, theta, k_real, objective)
    if selector == 'herding':
        return herding_select(R, theta, k_real)
    if selector == 'random':
        return random_select(R, k_real, seed)
    raise ConfigError(
        f'Unknown selector: {selector}, expected one of {SELECTORS}')
