import typing as T
from collections import deque

from .network.mlp import ParamVector
from ..errors import ConfigError, StateError


class CheckpointWindow():
    """Ring buffer of the most recent per-epoch parameter snapshots.

    Holds at most ``capacity`` entries; pushing epoch ``j`` evicts
    epoch ``j - capacity``. Epochs must arrive contiguously.
    """
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f'Window size must be >= 1, got {capacity}')
        self.capacity = capacity
        self._entries: T.Deque[T.Tuple[int, ParamVector]] = deque(
            maxlen=capacity)

    def push(self, epoch: int, model: ParamVector) -> T.Optional[int]:
        """Cache a snapshot of ``model`` taken after ``epoch``.

        Returns:
            The evicted epoch id, or None.
        """
        if self._entries and epoch != self._entries[-1][0] + 1:
            raise StateError(
                f'Epoch {epoch} does not follow cached epoch '
                f'{self._entries[-1][0]}.')
        evicted = None
        if len(self._entries) == self.capacity:
            evicted = self._entries[0][0]
        self._entries.append((epoch, model.clone()))
        return evicted

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> T.Iterator[ParamVector]:
        return iter(self.checkpoints)

    @property
    def epochs(self) -> T.List[int]:
        return [e for e, _ in self._entries]

    @property
    def checkpoints(self) -> T.List[ParamVector]:
        return [m for _, m in self._entries]

    def clear(self):
        self._entries.clear()


Checkpoints = T.Union[CheckpointWindow, ParamVector, T.Sequence[ParamVector]]


def as_checkpoint_list(checkpoints: Checkpoints) -> T.List[ParamVector]:
    if isinstance(checkpoints, ParamVector):
        return [checkpoints]
    if isinstance(checkpoints, CheckpointWindow):
        return checkpoints.checkpoints
    return list(checkpoints)
