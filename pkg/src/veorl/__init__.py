"""Video-enhanced offline RL at desk scale.

Learns a discrete codebook of latent behaviors from unlabeled video,
trains a two-stream recurrent world model (real-action trunk net and
behavior-conditioned plan net), and optimizes a latent-behavior-conditioned
actor-critic in imagination with a goal-conditioned intrinsic reward.
"""

__version__ = "0.1.0"
