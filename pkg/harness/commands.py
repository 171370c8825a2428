import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Generic, Literal, Optional, Type, TypeVar, Union, get_args, get_origin

import click
from pydantic import BaseModel
from pydantic.fields import FieldInfo


logger = logging.getLogger(__name__)

M = TypeVar('M', bound=BaseModel)

_SCALARS = {int: click.INT, float: click.FLOAT, str: click.STRING}


def _unwrap_optional(annotation: Any) -> Any:
    if get_origin(annotation) is Union:
        members = [a for a in get_args(annotation) if a is not type(None)]
        if len(members) == 1:
            return members[0]
    return annotation


def _option(name: str, field: FieldInfo) -> click.Option:
    """A click option for one request field. Defaults stay with the model: an omitted flag passes None."""
    annotation = _unwrap_optional(field.annotation)
    flag = '--' + name.replace('_', '-')
    help_text = field.description or ''
    if annotation is bool:
        return click.Option([f'{flag}/--no-{name.replace("_", "-")}'], default=None, help=help_text)
    if get_origin(annotation) is Literal:
        return click.Option([flag], type=click.Choice([str(v) for v in get_args(annotation)]), default=None,
                            help=help_text)
    if annotation is Path:
        return click.Option([flag], type=click.Path(path_type=Path), default=None, help=help_text,
                            required=field.is_required())
    return click.Option([flag], type=_SCALARS.get(annotation, click.STRING), default=None, help=help_text,
                        required=field.is_required())


class HarnessCommand(Generic[M], ABC):
    """A subcommand whose options are described by a pydantic request model."""

    def _get_model_type(self) -> Type[BaseModel]:
        """The concrete request model, read from the generic base of the subclass"""
        for base in type(self).__orig_bases__:
            origin = get_origin(base)
            if origin is None or not issubclass(origin, HarnessCommand):
                continue
            return get_args(base)[0]
        raise TypeError(f'{type(self).__name__} does not bind a request model')

    @abstractmethod
    def get_name(self) -> str:
        """Returns the name of this command."""
        pass

    @abstractmethod
    def get_description(self) -> str:
        """Returns the help text of this command."""
        pass

    @abstractmethod
    def execute(self, arguments: M) -> int:
        """Runs the command and returns its exit code."""
        pass

    def parse(self, options: Dict[str, Any]) -> M:
        """Validates the given options; omitted ones fall back to the model defaults."""
        return self._get_model_type().model_validate({k: v for k, v in options.items() if v is not None})

    def invoke(self, options: Dict[str, Any]) -> int:
        arguments = self.parse(options)
        logger.debug("'%s' request: %s", self.get_name(), arguments.model_dump_json())
        return self.execute(arguments)

    def to_click(self) -> click.Command:
        model = self._get_model_type()
        params = [_option(name, field) for name, field in model.model_fields.items()]

        def callback(**options) -> int:
            return self.invoke(options)

        return click.Command(self.get_name(), params=params, callback=callback, help=self.get_description())


def load_config_file(path: Optional[Path], model: Type[M], **defaults) -> M:
    """Reads a JSON configuration file into ``model``; without a file, ``model`` is built from ``defaults``."""
    if path is None:
        return model(**defaults)
    return model.model_validate_json(Path(path).read_text())
