"""The one exception type the tool raises for expected failure modes."""


class ExportError(Exception):
    """Bad request or broken input: unknown model or layer, unreadable
    model file, empty image directory, manifest hash drift."""
