"""Shared domain types for expert-parallel MoE load balancing.

Conventions used across the package:

* devices are indexed ``0..D-1``, experts ``0..E-1``;
* expert ``e``'s parameters and optimizer state live on its *home* device,
  which is device ``e`` under the one-expert-per-device layout (this
  requires ``E <= D``);
* sizes are bytes, bandwidths bytes/second, durations seconds, loads are
  routed-input counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""


class DimensionMismatchError(ValidationError):
    """Two domain objects disagree on device/expert dimensions."""


@dataclass(frozen=True)
class ClusterSpec:
    """Homogeneous device pool.

    avg_bandwidth is the single average link bandwidth used for every
    communication estimate; compute_throughput is expert-inputs per second
    processed by one device.
    """

    num_devices: int
    avg_bandwidth: float
    compute_throughput: float

    def __post_init__(self) -> None:
        if self.num_devices < 2:
            raise ValidationError(f"num_devices must be >= 2, got {self.num_devices}")
        if self.avg_bandwidth <= 0:
            raise ValidationError(f"avg_bandwidth must be > 0, got {self.avg_bandwidth}")
        if self.compute_throughput <= 0:
            raise ValidationError(
                f"compute_throughput must be > 0, got {self.compute_throughput}"
            )


@dataclass(frozen=True)
class ModelSpec:
    """Static description of the MoE model being simulated.

    num_blocks counts MoE blocks (one MoE layer plus its adjacent non-MoE
    layer). fnec_time/bnec_time are the forward/backward compute times of
    the non-MoE part of a block; they are static per model and are the
    windows the scheduler fills with parameter/gradient traffic.
    """

    num_experts: int
    num_blocks: int
    top_k: int
    input_bytes: float
    expert_param_bytes: float
    expert_grad_bytes: float
    fnec_time: float = 0.0
    bnec_time: float = 0.0

    def __post_init__(self) -> None:
        if self.num_experts < 1:
            raise ValidationError(f"num_experts must be >= 1, got {self.num_experts}")
        if self.num_blocks < 1:
            raise ValidationError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if not 1 <= self.top_k <= self.num_experts:
            raise ValidationError(
                f"top_k must be in [1, num_experts={self.num_experts}], got {self.top_k}"
            )
        for name in ("input_bytes", "expert_param_bytes", "expert_grad_bytes"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("fnec_time", "bnec_time"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")


class LoadMatrix:
    """Routed-input counts for one MoE layer of one iteration.

    ``counts[d][e]`` is the number of inputs resident on device ``d`` that
    the gate routed to expert ``e``. Row sums are equal across devices
    (each device holds the same number of local inputs, each counted
    top_k times).
    """

    __slots__ = ("counts",)

    def __init__(self, counts) -> None:
        arr = np.asarray(counts, dtype=np.int64)
        if arr.ndim != 2:
            raise ValidationError(f"counts must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"counts must be non-empty, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValidationError("counts entries must be >= 0")
        row_sums = arr.sum(axis=1)
        if len(set(row_sums.tolist())) > 1:
            raise ValidationError(
                f"row sums must be equal across devices, got {row_sums.tolist()}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("LoadMatrix is immutable")

    @property
    def num_devices(self) -> int:
        return self.counts.shape[0]

    @property
    def num_experts(self) -> int:
        return self.counts.shape[1]

    def total(self) -> int:
        """Total routed inputs (= inputs per iteration x top_k)."""
        return int(self.counts.sum())

    def expert_totals(self) -> np.ndarray:
        """Per-expert routed-input totals (column sums)."""
        return self.counts.sum(axis=0)

    def __eq__(self, other) -> bool:
        return isinstance(other, LoadMatrix) and np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash((self.counts.shape, self.counts.tobytes()))

    def __repr__(self) -> str:
        return f"LoadMatrix(D={self.num_devices}, E={self.num_experts}, total={self.total()})"


@dataclass(frozen=True)
class ExpertPlacement:
    """Per-expert replica device sets for one iteration.

    ``selected`` lists the experts whose parameters are transferred this
    iteration, in search order; ``excluded`` holds, for each selected
    expert, the devices it is *not* transferred to. A selected expert is
    therefore replicated on all devices except its excluded set (the home
    device can never be excluded); an unselected expert lives only on its
    home device. All excluded sets share one size ``n``.
    """

    num_devices: int
    num_experts: int
    selected: tuple[int, ...] = ()
    excluded: tuple[frozenset[int], ...] = ()

    def __post_init__(self) -> None:
        if self.num_experts > self.num_devices:
            raise ValidationError(
                f"identity homes need num_experts <= num_devices, got "
                f"E={self.num_experts} > D={self.num_devices}"
            )
        if len(self.selected) != len(self.excluded):
            raise ValidationError("selected and excluded must have equal length")
        if len(set(self.selected)) != len(self.selected):
            raise ValidationError(f"selected experts must be distinct, got {self.selected}")
        sizes = {len(x) for x in self.excluded}
        if len(sizes) > 1:
            raise ValidationError(f"excluded sets must share one size, got sizes {sorted(sizes)}")
        for e, bottom in zip(self.selected, self.excluded):
            if not 0 <= e < self.num_experts:
                raise ValidationError(f"selected expert {e} out of range")
            if not bottom <= frozenset(range(self.num_devices)):
                raise ValidationError(f"excluded devices {sorted(bottom)} out of range")
            if self.home(e) in bottom:
                raise ValidationError(
                    f"home device {self.home(e)} of expert {e} cannot be excluded"
                )

    @classmethod
    def empty(cls, num_devices: int, num_experts: int) -> "ExpertPlacement":
        """Vanilla expert parallelism: every expert only on its home device."""
        return cls(num_devices=num_devices, num_experts=num_experts)

    @staticmethod
    def home(expert: int) -> int:
        return expert

    @property
    def num_selected(self) -> int:
        return len(self.selected)

    @property
    def n(self) -> int:
        """Devices each selected expert is not transferred to (0 if none selected)."""
        return len(self.excluded[0]) if self.excluded else 0

    def replicas(self, expert: int) -> frozenset[int]:
        """Devices holding ``expert``'s parameters this iteration."""
        if not 0 <= expert < self.num_experts:
            raise ValidationError(f"expert {expert} out of range")
        try:
            i = self.selected.index(expert)
        except ValueError:
            return frozenset((self.home(expert),))
        return frozenset(range(self.num_devices)) - self.excluded[i]

    def replica_mask(self) -> np.ndarray:
        """Boolean (D, E) matrix; True where device d holds expert e."""
        mask = np.zeros((self.num_devices, self.num_experts), dtype=bool)
        mask[np.arange(self.num_experts), np.arange(self.num_experts)] = True
        for e, bottom in zip(self.selected, self.excluded):
            col = np.ones(self.num_devices, dtype=bool)
            if bottom:
                col[list(bottom)] = False
            mask[:, e] = col
        return mask


@dataclass(frozen=True)
class DeviceLoads:
    """Per-device computed and received input counts after routing.

    H[d] is the number of inputs device d computes; R[d] the number it
    receives from other devices over the all-to-all.
    """

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=np.int64)
        R = np.asarray(self.R, dtype=np.int64)
        if H.ndim != 1 or R.ndim != 1 or H.shape != R.shape:
            raise ValidationError(f"H and R must be 1-D of equal length, got {H.shape}, {R.shape}")
        if (H < 0).any() or (R < 0).any():
            raise ValidationError("H and R entries must be >= 0")
        H = H.copy()
        R = R.copy()
        H.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @property
    def num_devices(self) -> int:
        return self.H.shape[0]


def derive_loads(load: LoadMatrix, placement: ExpertPlacement) -> DeviceLoads:
    """Route every (device, expert) input batch under a placement.

    Inputs resident on a replica device of their expert are computed
    locally; inputs on non-replica devices are sent to the expert's home
    device, adding to both H and R there.
    """
    if (placement.num_devices, placement.num_experts) != (load.num_devices, load.num_experts):
        raise DimensionMismatchError(
            f"placement is {placement.num_devices}x{placement.num_experts}, "
            f"load is {load.num_devices}x{load.num_experts}"
        )
    mask = placement.replica_mask()
    counts = load.counts
    local_per_device = (counts * mask).sum(axis=1)
    remote_per_expert = (counts * ~mask).sum(axis=0)
    H = local_per_device.astype(np.int64, copy=True)
    H[: load.num_experts] += remote_per_expert
    R = np.zeros(load.num_devices, dtype=np.int64)
    R[: load.num_experts] = remote_per_expert
    return DeviceLoads(H=H, R=R)
