"""Exception types shared across the pipeline and the CLI."""


class InputError(ValueError):
    """An input file or layer could not be parsed or is inconsistent."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and offending entity."""

    def __init__(self, stage: str, message: str, entity: object = None):
        self.stage = stage
        self.entity = entity
        where = f" [{entity}]" if entity is not None else ""
        super().__init__(f"stage '{stage}'{where}: {message}")


class EmptyParcelSet(StageError):
    def __init__(self, message: str = "no land left after removing roads and water"):
        super().__init__("parcels", message)
