#!/usr/bin/env python3
"""Convert ImageNet backbone weights to the safetensors layout histo-tl loads.

VGG16, VGG19, ResNet50, InceptionV3 and DenseNet201 come from torchvision;
NASNetLarge comes from Keras. Classifier layers are dropped.

    python scripts/export_weights.py --out weights VGG19 ResNet50
"""

import argparse
import os
import sys

import numpy as np
from safetensors.numpy import save_file

TORCHVISION = {
    "VGG16": ("vgg16", "VGG16_Weights", ["classifier."]),
    "VGG19": ("vgg19", "VGG19_Weights", ["classifier."]),
    "ResNet50": ("resnet50", "ResNet50_Weights", ["fc."]),
    "InceptionV3": ("inception_v3", "Inception_V3_Weights", ["fc.", "AuxLogits."]),
    "DenseNet201": ("densenet201", "DenseNet201_Weights", ["classifier."]),
}


def torchvision_tensors(model, backbone):
    """State dict minus classifier layers and batch counters, as numpy."""
    drop = TORCHVISION[backbone][2]
    out = {}
    for key, value in model.state_dict().items():
        if key.endswith("num_batches_tracked") or any(key.startswith(d) for d in drop):
            continue
        out[key] = value.detach().cpu().numpy().astype(np.float32)
    return out


def torchvision_model(backbone, pretrained=True):
    import torchvision.models as models

    fn_name, weights_name, _ = TORCHVISION[backbone]
    weights = getattr(models, weights_name).IMAGENET1K_V1 if pretrained else None
    kwargs = {"init_weights": False} if backbone == "InceptionV3" and not pretrained else {}
    return getattr(models, fn_name)(weights=weights, **kwargs)


def keras_tensors(model):
    """Keras NASNet layers renamed and transposed to channels-first."""
    out = {}
    for layer in model.layers:
        kind = type(layer).__name__
        weights = {w.path.split("/")[-1]: w.numpy() for w in layer.weights}
        if kind == "Conv2D":
            out[f"{layer.name}.weight"] = weights["kernel"].transpose(3, 2, 0, 1)
        elif kind == "SeparableConv2D":
            out[f"{layer.name}.depthwise.weight"] = weights["depthwise_kernel"].transpose(2, 3, 0, 1)
            out[f"{layer.name}.pointwise.weight"] = weights["pointwise_kernel"].transpose(3, 2, 0, 1)
        elif kind == "BatchNormalization":
            out[f"{layer.name}.weight"] = weights["gamma"]
            out[f"{layer.name}.bias"] = weights["beta"]
            out[f"{layer.name}.running_mean"] = weights["moving_mean"]
            out[f"{layer.name}.running_var"] = weights["moving_variance"]
    return {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in out.items()}


def keras_nasnet(pretrained=True, input_shape=None):
    import keras

    return keras.applications.NASNetLarge(
        weights="imagenet" if pretrained else None,
        include_top=False,
        input_shape=input_shape,
        pooling="avg",
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("backbones", nargs="+", choices=[*TORCHVISION, "NASNetLarge"])
    parser.add_argument("--out", default="weights", help="output directory")
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    for backbone in args.backbones:
        if backbone == "NASNetLarge":
            tensors = keras_tensors(keras_nasnet())
        else:
            tensors = torchvision_tensors(torchvision_model(backbone), backbone)
        path = os.path.join(args.out, f"{backbone}.safetensors")
        save_file(tensors, path)
        print(f"{backbone}: {len(tensors)} tensors -> {path}", file=sys.stderr)


if __name__ == "__main__":
    main()
