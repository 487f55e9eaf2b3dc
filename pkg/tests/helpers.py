"""Small shared fixtures: desk-scale encoder configs and datasets."""

from mmhar.data import generate_synthetic, preprocess_samples
from mmhar.encoders import InertialEncoderConfig, SkeletonEncoderConfig


def tiny_inertial_config(channels=6):
    return InertialEncoderConfig(
        in_channels=channels, conv_channels=(8, 16), feature_dim=16,
        attention_blocks=1, attention_heads=2, attention_feedforward=32,
        attention_dropout=0.0,
    )


def tiny_skeleton_config(joints=4, coords=2):
    return SkeletonEncoderConfig(
        num_joints=joints, coord_channels=coords, point_channels=(8, 4),
        joint_channels=(4, 8), fused_channels=(8, 16), feature_dim=16,
    )


def tiny_dataset(num_classes=3, per_class=6, timesteps=10, noise=0.1, seed=0, **gen_kwargs):
    samples = generate_synthetic(
        num_classes, per_class, timesteps=timesteps, sensor_channels=6,
        num_joints=4, coord_channels=2, noise=noise, seed=seed, **gen_kwargs,
    )
    return preprocess_samples(samples, timesteps)
