import numpy as np

from dstap.models.abstractmodel import AbstractModel
from dstap.radar.geometry import cell_center
from dstap.utils.errors import ShapeError


def peak_cell(values):
    """(bin, i, j) of the maximum; ties go to the lexicographically smallest index."""
    values = np.asarray(values)
    if values.ndim != 3 or values.size == 0:
        raise ShapeError(f"peak_cell expects a non-empty 3-D tensor, got shape {values.shape}")
    # argmax scans in C order and returns the first maximum
    return tuple(int(k) for k in np.unravel_index(int(np.argmax(values)), values.shape))


def baseline_predict(tensor, range_grid, angle_grid):
    values = getattr(tensor, 'values', tensor)
    b, i, j = peak_cell(values)
    return cell_center(range_grid, angle_grid, b, i, j)


class MvdrPeakBaseline(AbstractModel):
    """Classical localizer: center of the grid cell with the peak MVDR output power."""

    def __init__(self, scenario, name='MVDR-Peak'):
        super().__init__(None, name)
        self.range_grid = scenario.range_grid
        self.angle_grid = scenario.angle_grid
        self.tensor_shape = scenario.tensor_shape

    def train(self, *args, **kwargs):
        pass  # nothing to learn

    def predict(self, tensors, **kwargs):
        tensors = np.asarray(tensors)
        if tensors.shape[1:] != tuple(self.tensor_shape):
            raise ShapeError(f"baseline expects tensors of shape {self.tensor_shape}, got {tensors.shape[1:]}")
        return np.stack([baseline_predict(t, self.range_grid, self.angle_grid).as_array() for t in tensors])
