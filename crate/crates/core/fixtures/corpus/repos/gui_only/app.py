import tkinter as tk


def _build_window():
    root = tk.Tk()
    count = tk.IntVar(value=0)
    tk.Button(root, text="click", command=lambda: _bump(count)).pack()
    tk.Label(root, textvariable=count).pack()
    return root


def _bump(var):
    var.set(var.get() + 1)


if __name__ == "__main__":
    _build_window().mainloop()
