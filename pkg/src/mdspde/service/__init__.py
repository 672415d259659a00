"""HTTP service exposing the package operations."""


def __getattr__(name):
    # app import is deferred: schemas are imported by the config layer, which
    # the app itself depends on
    if name in ("app", "create_app"):
        from . import app as _app_module

        return getattr(_app_module, name)
    raise AttributeError(name)


__all__ = ["app", "create_app"]
