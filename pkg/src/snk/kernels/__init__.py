from snk.kernels.conv import ConvSpec, conv2d_fast, conv2d_naive
from snk.kernels.dense import fully_connected, relu
from snk.kernels.norm import BnParams, batch_norm, fold_bn
from snk.kernels.pooling import avg_pool, global_avg_pool, max_pool
from snk.kernels.shuffle import channel_shuffle, channel_shuffle_perm

__all__ = [
    "BnParams",
    "ConvSpec",
    "avg_pool",
    "batch_norm",
    "channel_shuffle",
    "channel_shuffle_perm",
    "conv2d_fast",
    "conv2d_naive",
    "fold_bn",
    "fully_connected",
    "global_avg_pool",
    "max_pool",
    "relu",
]
