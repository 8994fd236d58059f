"""Export ImageNet backbones from keras.applications to safetensors.

Keys are `<layer>/<variable>` with Keras' HWIO kernels left as they are;
the file is tagged `fer.layout = keras-hwio` so the loader transposes them.

    python scripts/export_keras_weights.py --out weights/
    export FER_WEIGHTS_ROOT=weights
"""

import argparse
import os

import numpy as np
from safetensors.numpy import save_file

import keras

BUILDERS = {
    "vgg16": keras.applications.VGG16,
    "vgg19": keras.applications.VGG19,
    "inceptionv3": keras.applications.InceptionV3,
    "inceptionresnetv2": keras.applications.InceptionResNetV2,
}


def export(name, out_dir, weights):
    # Auto-generated layer names (conv2d_17, ...) depend on what was built
    # earlier in the session, so every model starts from a cleared session.
    keras.backend.clear_session()
    model = BUILDERS[name](include_top=False, weights=weights, input_shape=(224, 224, 3))
    tensors = {}
    for layer in model.layers:
        for var in layer.weights:
            role = var.path.split("/")[-1]
            tensors[f"{layer.name}/{role}"] = np.ascontiguousarray(var.numpy(), dtype=np.float32)
    path = os.path.join(out_dir, f"{name}.safetensors")
    save_file(tensors, path, metadata={"fer.layout": "keras-hwio", "fer.source": f"keras.applications/{weights}"})
    total = sum(t.size for t in tensors.values())
    print(f"{name}: {len(tensors)} tensors, {total} parameters -> {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--backbone", action="append", choices=sorted(BUILDERS), help="repeatable; default all four")
    ap.add_argument("--weights", default="imagenet", help="'imagenet' or None for an untrained layout check")
    args = ap.parse_args()
    weights = None if args.weights == "None" else args.weights
    os.makedirs(args.out, exist_ok=True)
    for name in args.backbone or list(BUILDERS):
        export(name, args.out, weights)


if __name__ == "__main__":
    main()
