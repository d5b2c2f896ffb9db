"""Export torchvision VGG-19 convolution weights for the perceptual loss.

    pip install torch torchvision safetensors
    python scripts/export_vgg19.py vgg19.safetensors
"""
import sys

import torch
from safetensors.torch import save_file
from torchvision.models import VGG19_Weights, vgg19


def main(out: str) -> None:
    model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).eval()
    tensors = {
        k: v.detach().to(torch.float32).contiguous()
        for k, v in model.state_dict().items()
        if k.startswith("features.")
    }
    save_file(tensors, out, metadata={"source": "torchvision vgg19 IMAGENET1K_V1"})
    print(f"wrote {len(tensors)} tensors to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "vgg19.safetensors")
