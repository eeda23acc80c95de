"""
Leaf modules used by the planners and experiments.

- autograd: reverse-mode automatic differentiation over numpy arrays
- granular_sim: heightfield slope, excavation, relaxation and obstacle transport
- imaging: depth, difference and action images plus obstacle masking
- io_formats: binary dataset and model file formats
"""

from app.utils.autograd import NumericError, Tensor
from app.utils.granular_sim import (DivergenceError, ExcavationAction,
                                    InvalidActionError, Obstacle, SlopeState,
                                    action_grid, new_slope, step)
from app.utils.imaging import (UnknownObstacleError, action_image,
                               delta_depth, mask_delta, mask_depth,
                               render_depth)
from app.utils.io_formats import (FormatError, TransitionRecord, read_dataset,
                                  write_dataset)
