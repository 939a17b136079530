"""Append-only columnar store for demonstrations."""

from __future__ import annotations

import numpy as np

from .safetyfilter import Demonstration
from .vehicle import Action

OBS_DIM = 108


class Dataset:
    """Columns: obs, actions (steering, speed), sigma, v, expert_id, rollout_id, step_index.

    Records are only ever appended; the action column is the one field that
    conflict resolution may rewrite.
    """

    _columns = (("obs", np.float64, (OBS_DIM,)), ("actions", np.float64, (2,)),
                ("sigma", np.float64, ()), ("v", np.float64, ()),
                ("expert_id", np.int32, ()), ("rollout_id", np.int32, ()),
                ("step_index", np.int32, ()))

    def __init__(self, capacity: int = 256, obs_dim: int = OBS_DIM):
        self._n = 0
        self._cap = max(1, capacity)
        self._obs_dim = obs_dim
        self._data = {name: np.zeros((self._cap, *(shape if name != "obs" else (obs_dim,))), dtype)
                      for name, dtype, shape in self._columns}
        self._unit = np.zeros((self._cap, obs_dim))

    def __len__(self) -> int:
        return self._n

    def _col(self, name):
        return self._data[name][: self._n]

    obs = property(lambda self: self._col("obs"))
    actions = property(lambda self: self._col("actions"))
    sigma = property(lambda self: self._col("sigma"))
    v = property(lambda self: self._col("v"))
    expert_id = property(lambda self: self._col("expert_id"))
    rollout_id = property(lambda self: self._col("rollout_id"))
    step_index = property(lambda self: self._col("step_index"))

    @property
    def unit_obs(self) -> np.ndarray:
        """Rows of ``obs`` scaled to unit Euclidean norm."""
        return self._unit[: self._n]

    def _grow(self, need: int) -> None:
        if need <= self._cap:
            return
        cap = max(need, 2 * self._cap)
        for name, arr in self._data.items():
            new = np.zeros((cap, *arr.shape[1:]), arr.dtype)
            new[: self._n] = arr[: self._n]
            self._data[name] = new
        unit = np.zeros((cap, self._obs_dim))
        unit[: self._n] = self._unit[: self._n]
        self._unit = unit
        self._cap = cap

    def append_arrays(self, obs, actions, sigma, v, expert_id, rollout_id, step_index) -> None:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        k = len(obs)
        if k == 0:
            return
        norms = np.linalg.norm(obs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("observation with zero norm")
        self._grow(self._n + k)
        sl = slice(self._n, self._n + k)
        for name, value in (("obs", obs), ("actions", actions), ("sigma", sigma), ("v", v),
                            ("expert_id", expert_id), ("rollout_id", rollout_id),
                            ("step_index", step_index)):
            self._data[name][sl] = value
        self._unit[sl] = obs / norms
        self._n += k

    def extend(self, demos: list[Demonstration]) -> None:
        if not demos:
            return
        self.append_arrays(np.array([d.obs for d in demos]),
                           np.array([(d.action.steering, d.action.speed) for d in demos]),
                           [d.sigma for d in demos], [d.v for d in demos],
                           [d.expert_id for d in demos], [d.rollout_id for d in demos],
                           [d.step_index for d in demos])

    def merge(self, other: "Dataset") -> None:
        self.append_arrays(other.obs, other.actions, other.sigma, other.v,
                           other.expert_id, other.rollout_id, other.step_index)

    @classmethod
    def from_demos(cls, demos: list[Demonstration], obs_dim: int | None = None) -> "Dataset":
        dim = obs_dim or (len(demos[0].obs) if demos else OBS_DIM)
        ds = cls(capacity=max(1, len(demos)), obs_dim=dim)
        ds.extend(demos)
        return ds

    def to_demos(self) -> list[Demonstration]:
        return [Demonstration(self.obs[i].copy(), Action(*self.actions[i]), float(self.sigma[i]),
                              float(self.v[i]), int(self.expert_id[i]), int(self.rollout_id[i]),
                              int(self.step_index[i])) for i in range(self._n)]

    def copy(self) -> "Dataset":
        ds = Dataset(capacity=max(1, self._n), obs_dim=self._obs_dim)
        ds.merge(self)
        return ds

    def save(self, path) -> None:
        np.savez(path, **{name: self._col(name) for name, _, _ in self._columns})

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            ds = cls(capacity=max(1, len(z["sigma"])), obs_dim=z["obs"].shape[1])
            ds.append_arrays(z["obs"], z["actions"], z["sigma"], z["v"], z["expert_id"],
                             z["rollout_id"], z["step_index"])
        return ds
