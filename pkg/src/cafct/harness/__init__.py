from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config
from .data import (
    SegSample,
    generate_synthetic_dataset,
    load_dataset,
    read_image_pgm,
    read_mask_pgm,
    save_dataset,
    write_mask_pgm,
)
from .evaluate import evaluate, infer
from .gradcheck_suites import run_grad_checks
from .train import SGD, train
