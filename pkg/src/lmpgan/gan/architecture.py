"""Generator and discriminator layer stacks.

Both networks start with a depthwise layer of 64 filters per input channel
whose stacks are then concatenated, which is what makes the second-layer
map counts equal ``64 * input channels`` (896 for 14 inputs, 320 for 5).
"""
from __future__ import annotations

from ..nn_core import network as nn

G_WIDTHS = (64, 1024, 512, 64)
D_WIDTHS = (64, 1024, 512, 256)


def _scale(widths, width):
    return tuple(max(1, int(round(w * width))) for w in widths)


def generator_spec(in_channels: int, grid=(3, 3), width: float = 1.0) -> nn.NetworkSpec:
    """Padded transpose convs, each followed by batchnorm + ReLU; tanh output."""
    w1, w3, w4, w5 = _scale(G_WIDTHS, width)
    layers = [
        nn.conv2d_transpose(in_channels, w1, "same", depthwise=True),
        nn.batchnorm(),
        nn.simple("relu"),
        nn.simple("concat_grouped"),
    ]
    prev = in_channels * w1
    for w in (w3, w4, w5):
        layers += [nn.conv2d_transpose(prev, w, "same"), nn.batchnorm(), nn.simple("relu")]
        prev = w
    layers += [nn.conv2d_transpose(prev, 1, "same"), nn.simple("tanh")]
    return nn.NetworkSpec((in_channels, *grid), tuple(layers))


def discriminator_spec(in_channels: int, grid=(3, 3), width: float = 1.0) -> nn.NetworkSpec:
    """Unpadded convs, then a dense stack; batchnorm, leaky ReLU and dropout
    after every hidden layer; sigmoid output."""
    w1, w3, w4, w5 = _scale(D_WIDTHS, width)

    def block():
        return [nn.batchnorm(), nn.leaky_relu(0.2), nn.dropout(0.3)]

    layers = [nn.conv2d(in_channels, w1, "valid", depthwise=True), *block()]
    spec = nn.NetworkSpec((in_channels, *grid), tuple(layers))
    # unpadded 3x3 convs shrink until the grid is consumed (3x3 -> 1x1 in one step)
    shape = spec.output_shape
    while shape[-1] > 2 and shape[-2] > 2:
        c = shape[0] * shape[1] if len(shape) == 4 else shape[0]
        if len(shape) == 4:
            layers.append(nn.simple("concat_grouped"))
        layers += [nn.conv2d(c, w1, "valid"), *block()]
        shape = nn.NetworkSpec((in_channels, *grid), tuple(layers)).output_shape
    if len(shape) == 4:
        layers.append(nn.simple("concat_grouped"))
    layers.append(nn.simple("flatten"))
    prev = nn.NetworkSpec((in_channels, *grid), tuple(layers)).output_shape[0]
    for w in (w3, w4, w5):
        layers += [nn.dense(prev, w), *block()]
        prev = w
    layers += [nn.dense(prev, 1), nn.simple("sigmoid")]
    return nn.NetworkSpec((in_channels, *grid), tuple(layers))
