class TrackingLabError(Exception):
    pass


class InvalidArgument(TrackingLabError, ValueError):
    pass


class FormatError(TrackingLabError):
    """
    An on-disk artifact does not follow the documented layout.
    `path`, `line` and `field` are filled in whenever they are known so the
    message can point at the offending spot.
    """

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        self.detail = message
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append('line %d' % line)
        if field is not None:
            location.append('field "%s"' % field)
        if location:
            message = '%s: %s' % (', '.join(location), message)
        super().__init__(message)


class CorruptFileError(FormatError):
    pass


class ProtocolViolation(TrackingLabError):
    pass


class GenerationError(TrackingLabError):
    pass


class ConfigurationError(TrackingLabError):
    pass
