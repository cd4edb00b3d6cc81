from ._umm import (
    Model,
    analyze_hfi,
    config_digest,
    default_config,
    describe_image,
    encode_prompt,
    pixel_shuffle,
    pixel_unshuffle,
    random_scene,
    read_ppm,
    render_scene,
    shift_time,
    time_grid,
    train,
    vocabulary,
    write_ppm,
)

__all__ = [
    "Model",
    "analyze_hfi",
    "config_digest",
    "default_config",
    "describe_image",
    "encode_prompt",
    "pixel_shuffle",
    "pixel_unshuffle",
    "random_scene",
    "read_ppm",
    "render_scene",
    "shift_time",
    "time_grid",
    "train",
    "vocabulary",
    "write_ppm",
]
