from .io import (
    DimensionMismatchError,
    DTypeMismatchError,
    F3DError,
    MalformedHeaderError,
    TruncatedPayloadError,
    content_hash,
    read_arrays,
    read_volume,
    write_arrays,
    write_volume,
)
from .phantom import (
    PhantomError,
    PhantomSpec,
    VolumeRecord,
    generate_dataset,
    generate_phantom,
    load_dataset,
    save_dataset,
)
