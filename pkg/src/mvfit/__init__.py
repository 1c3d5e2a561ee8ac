"""mvfit: multi-view fitting of a rigged, deformable human template.

Recovers skeletal pose and dense non-rigid surface deformation of a
template mesh from calibrated multi-view 2D keypoints and silhouettes,
via a two-stage per-frame optimizer over a differentiable kinematics /
embedded-deformation model.
"""

__version__ = "0.1.0"
