"""The small residual-flow network: five 7x7 stride-1 layers, 8 -> 2 channels.

Layer table (kernel 7x7, stride 1, same padding, ReLU after every layer
except the last):

    conv1    8 -> 32
    conv2   32 -> 64
    deconv2 64 -> 32
    deconv1 32 -> 16
    deconv0 16 ->  2

A stride-1 "deconvolution" with same padding is spatially identical to a
convolution, so all five layers are plain convolutions and the spatial
size is preserved end to end.  Total parameter count with biases: 240,050.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError

KERNEL_SIZE = 7

# (name, channels in, channels out)
LAYER_TABLE = (
    ("conv1", 8, 32),
    ("conv2", 32, 64),
    ("deconv2", 64, 32),
    ("deconv1", 32, 16),
    ("deconv0", 16, 2),
)

# Per-channel normalization of [0, 1] RGB inputs (large-corpus statistics),
# plus a fixed scale for the flow channels.
IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
FLOW_SCALE = 10.0


class ResidualFlowNet(nn.Module):
    def __init__(self):
        super().__init__()
        layers = {}
        for name, c_in, c_out in LAYER_TABLE:
            layers[name] = nn.Conv2d(
                c_in, c_out, KERNEL_SIZE, stride=1, padding=KERNEL_SIZE // 2
            )
        self.layers = nn.ModuleDict(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        names = [name for name, _, _ in LAYER_TABLE]
        for name in names[:-1]:
            x = torch.relu(self.layers[name](x))
        return self.layers[names[-1]](x)


def build_network(seed: int | None = None) -> ResidualFlowNet:
    if seed is not None:
        torch.manual_seed(seed)
    return ResidualFlowNet()


def parameter_count(net: nn.Module | None = None) -> int:
    if net is not None:
        return sum(p.numel() for p in net.parameters())
    return sum(
        KERNEL_SIZE * KERNEL_SIZE * c_in * c_out + c_out
        for _, c_in, c_out in LAYER_TABLE
    )


def expected_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, c_in, c_out in LAYER_TABLE:
        shapes[f"{name}.weight"] = (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE)
        shapes[f"{name}.bias"] = (c_out,)
    return shapes


def save_weights(net: ResidualFlowNet, path) -> None:
    """Write weights as an .npz container keyed by layer name."""
    arrays = {
        f"{name}.weight": net.layers[name].weight.detach().numpy()
        for name, _, _ in LAYER_TABLE
    }
    arrays.update(
        {
            f"{name}.bias": net.layers[name].bias.detach().numpy()
            for name, _, _ in LAYER_TABLE
        }
    )
    np.savez(path, **arrays)


def load_weights(path) -> ResidualFlowNet:
    """Load an .npz weight container, refusing any shape mismatch."""
    with np.load(path) as data:
        arrays = {k: np.array(v) for k, v in data.items()}
    expected = expected_shapes()
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise ConfigurationError(f"weight file missing tensors: {missing}")
    for key, shape in expected.items():
        if arrays[key].shape != shape:
            raise ConfigurationError(
                f"{key}: expected shape {shape}, file has {arrays[key].shape}"
            )
    net = ResidualFlowNet()
    with torch.no_grad():
        for name, _, _ in LAYER_TABLE:
            net.layers[name].weight.copy_(torch.from_numpy(arrays[f"{name}.weight"]))
            net.layers[name].bias.copy_(torch.from_numpy(arrays[f"{name}.bias"]))
    return net


def normalize_stack(
    reference: np.ndarray, warped: np.ndarray, flow: np.ndarray
) -> np.ndarray:
    """Build the normalized 8-channel input, channels first (8, H, W).

    The two RGB images are standardized per channel; the flow channels are
    divided by FLOW_SCALE.  The same normalization runs at training and
    inference time; it is affine and therefore exactly invertible.
    """
    ref = (reference.astype(np.float32) - IMAGE_MEAN) / IMAGE_STD
    wrp = (warped.astype(np.float32) - IMAGE_MEAN) / IMAGE_STD
    flo = np.nan_to_num(flow.astype(np.float32) / FLOW_SCALE)
    stack = np.concatenate([ref, wrp, flo], axis=2)
    return np.ascontiguousarray(stack.transpose(2, 0, 1))


def forward_residual(
    net: ResidualFlowNet, reference: np.ndarray, warped: np.ndarray, flow: np.ndarray
) -> np.ndarray:
    """Run the network on one stack; returns the residual flow (H, W, 2) px."""
    stack = normalize_stack(reference, warped, flow)
    with torch.no_grad():
        out = net(torch.from_numpy(stack[None]))
    return out[0].numpy().transpose(1, 2, 0).astype(np.float64)


def epe_loss(
    predicted: np.ndarray, target: np.ndarray, valid: np.ndarray | None = None
) -> float:
    """Average endpoint error: mean Euclidean distance between flows.

    Raises ValueError when no valid pixel remains.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError("flow shapes must match")
    err = np.linalg.norm(predicted - target, axis=-1)
    if valid is not None:
        err = err[valid]
    if err.size == 0:
        raise ValueError("no valid pixels for endpoint error")
    return float(err.mean())
