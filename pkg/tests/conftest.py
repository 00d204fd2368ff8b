import numpy as np

from rcmalign.estimation import FeatureConfig, FreeSpaceModel
from rcmalign.phantom import RigConfig


def make_exact_model(rig: RigConfig) -> FreeSpaceModel:
    """Predictor whose weights are the rig's own torque coefficients.

    The simulator's free-space torque model lies inside the feature span, so
    placing its coefficients directly gives a zero-error oracle predictor.
    Feature order: [1, q1, q2, q3, sin q1, cos q1, sin q2, cos q2,
                    qd1, qd2, qd3, tanh1, tanh2, tanh3, cos q1 cos q2].
    """
    cfg = FeatureConfig(window=1, velocity_scale=rig.coulomb_vel_scale)
    w = np.zeros((3, 15))
    b, c = rig.viscous_b, rig.coulomb_c
    w[0, 8] = b[0]
    w[0, 11] = c[0]
    w[1, 6] = rig.gravity_g2
    w[1, 9] = b[1]
    w[1, 12] = c[1]
    w[2, 14] = rig.gravity_g3
    w[2, 10] = b[2]
    w[2, 13] = c[2]
    return FreeSpaceModel(feature=cfg, weights=w, lambdas=(0.0, 0.0, 0.0))
