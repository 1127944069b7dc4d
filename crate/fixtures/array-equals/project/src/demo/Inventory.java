package demo;

import java.util.Arrays;

public class Inventory {
    private final Object[] items;

    public Inventory(Object[] items) {
        this.items = items;
    }

    public boolean matches(Object[] other) {
        return items.equals(other);
    }

    public boolean matchesDeep(Object[] other) {
        return Arrays.equals(items, other);
    }

    public boolean sameLabel(String a, String b) {
        return a.equals(b);
    }
}
